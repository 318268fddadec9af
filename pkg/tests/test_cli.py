import json
import shutil
from pathlib import Path

import pytest

from nvrti.cli import main, read_table_csv
from nvrti.config import ConfigError, load_config, parse_config_text, validate_document
from nvrti.fitting import read_histogram_csv

FIXTURES = Path(__file__).parent / "fixtures"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_predict_default(capsys):
    code, out, _ = run(["predict"], capsys)
    assert code == 0
    doc = json.loads(out)
    validate_document(doc, "prediction")
    assert doc["protocol"]["threshold"] == 1 and doc["protocol"]["probe_power"] == 6.0
    # low-power plateau band shared with the acceptance criterion
    assert 0.975 <= doc["prediction"]["fidelity"] <= 0.995
    assert doc["manifest"]["command"] == ["predict"]
    assert "timestamp" not in doc["manifest"]


def test_predict_threshold_zero_is_validation_error(capsys):
    code, _, err = run(["predict", "--threshold", "0"], capsys)
    assert code == 2 and "threshold" in err


def test_predict_zero_delay(capsys):
    code, out, _ = run(["predict", "--delay", "0"], capsys)
    p = json.loads(out)["prediction"]
    assert code == 0 and p["epsilon_d"] == 0.0 and p["fidelity"] == 1 - p["epsilon_t"]


def test_bare_number_rejected(capsys):
    code, _, err = run(["predict", "--probe-power", "6"], capsys)
    assert code == 2 and "unit" in err


def test_set_override_and_units(capsys):
    _, out, _ = run(["predict", "--set", "protocol.probe_duration=9 us", "--threshold", "2"], capsys)
    doc = json.loads(out)
    assert doc["protocol"]["probe_duration"] == 9e-6 and doc["protocol"]["threshold"] == 2


def test_malformed_config_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "protocol": {\n    "probe_power": "6 uW",\n    "delay": 550\n  }\n}\n')
    code, _, err = run(["predict", "--config", p], capsys)
    assert code == 2
    assert f"{p}:4:" in err
    p.write_text('{\n  "protocol": {\n    "probe_power": "6 uW",\n  }\n}\n')
    code, _, err = run(["predict", "--config", p], capsys)
    assert code == 2 and f"{p}:4:" in err


def test_unit_error_reports_line(tmp_path):
    text = '{\n  "seed": 1,\n  "protocol": {\n    "probe_duration": "5 parsecs"\n  }\n}\n'
    cfg = parse_config_text(text, "cfg.json")
    with pytest.raises(ConfigError) as exc:
        cfg.protocol()
    assert exc.value.line == 4


def test_env_var_config(tmp_path, monkeypatch, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"protocol": {"probe_power": "20 uW"}}))
    monkeypatch.setenv("NVRTI_CONFIG", str(p))
    assert load_config().source == str(p)
    _, out, _ = run(["predict"], capsys)
    assert json.loads(out)["protocol"]["probe_power"] == 20.0


def test_simulate_outputs_and_consistency(tmp_path, capsys):
    code, out, _ = run(["simulate", "--shots", 20000, "--seed", 5, "--probe-power", "30 uW",
                        "--out", tmp_path / "a", "-o", tmp_path / "a.json"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "a" / "summary.json").read_text())
    validate_document(doc, "emulate_summary")
    s, p = doc["summary"], doc["prediction"]
    assert abs(s["fidelity"] - p["fidelity"]) < 3 * s["fidelity_err"]
    header, rows = read_table_csv(tmp_path / "a" / "runs.csv")
    assert header[:2] == ["run", "attempts"] and len(rows) == 20000
    assert sum(int(r[3]) for r in rows) / 20000 == pytest.approx(s["fidelity"])


def test_simulate_zero_shots(tmp_path, capsys):
    code, _, _ = run(["simulate", "--shots", 0, "--out", tmp_path], capsys)
    assert code == 2


def test_fit_fixture_matches_reference(tmp_path, capsys):
    out = tmp_path / "fit.json"
    code, _, _ = run(["fit", "--config", FIXTURES / "fit_joint.json", "-o", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    validate_document(doc, "fit_result")
    ref = json.loads((FIXTURES / "reference_fit.json").read_text())
    for k in ("p_minus[0]", "p_minus[1]"):
        assert doc["parameters"][k] == pytest.approx(ref["parameters"][k], abs=1e-6)
        assert doc["standard_errors"][k] == pytest.approx(ref["standard_errors"][k], rel=1e-3)
    assert abs(doc["parameters"]["p_minus[0]"] - 0.733) < 3 * doc["standard_errors"]["p_minus[0]"]
    assert abs(doc["parameters"]["p_minus[1]"] - 0.994) < 3 * doc["standard_errors"]["p_minus[1]"]
    assert set(doc["manifest"]["inputs"]) == {str(FIXTURES / "histogram_0.csv"), str(FIXTURES / "histogram_1.csv")}


def test_fit_empty_csv(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("")
    cfg = {"fit": {"datasets": [{"path": "empty.csv", "t_r": "5 us", "power": "100 uW"}]}}
    (tmp_path / "fit.json").write_text(json.dumps(cfg))
    code, _, err = run(["fit", "--config", tmp_path / "fit.json"], capsys)
    assert code == 2 and "empty" in err


def test_fit_curve_from_csv(tmp_path, capsys):
    import numpy as np

    from nvrti.spin import relaxation

    x = np.linspace(0.1e-3, 20e-3, 40)
    y = relaxation(x, 0.1, 1.0, 5.3e-3)
    lines = ["t_s,y,sigma"] + [f"{float(a)!r},{float(b)!r},0.01" for a, b in zip(x, y)]
    (tmp_path / "t1.csv").write_text("\n".join(lines) + "\n")
    cfg = {"fit": {"model": "t1", "datasets": [{"path": "t1.csv"}],
                   "init": {"offset": 0.0, "amplitude": 0.8, "t1": "3 ms"}}}
    (tmp_path / "fit.json").write_text(json.dumps(cfg))
    code, out, _ = run(["fit", "--config", tmp_path / "fit.json"], capsys)
    assert code == 0
    assert json.loads(out)["parameters"]["t1"] == pytest.approx(5.3e-3, rel=1e-6)


def test_nonconverged_fit_exit_code(tmp_path, capsys):
    (tmp_path / "one.csv").write_text("n,count\n0,500\n")
    cfg = {"fit": {"datasets": [{"path": "one.csv", "t_r": "5 us", "power": "100 uW"}]}}
    (tmp_path / "fit.json").write_text(json.dumps(cfg))
    code, out, err = run(["fit", "--config", tmp_path / "fit.json"], capsys)
    assert code == 3
    assert json.loads(out)["converged"] is False


def test_optimize_and_typo(capsys):
    code, out, _ = run(["optimize", "--strategy", "RTI_PL", "--tau-o", "1 ms"], capsys)
    assert code == 0
    validate_document(json.loads(out), "efficiency_report")
    code, _, err = run(["optimize", "--strategy", "RTI_SCX", "--tau-o", "1 ms"], capsys)
    assert code == 2 and "invalid choice" in err and "RTI_SCC" in err


def test_speedup_curve_shape(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _, _ = run(["speedup-curve", "--tau-o-grid", "10us,100us,1ms", "-o", out], capsys)
    header, rows = read_table_csv(out)
    assert code == 0 and header == ["tau_o", "strategy", "speedup"] and len(rows) == 12
    assert out.read_text().startswith("# manifest:")


def test_sensitivity_command(capsys):
    code, out, _ = run(["sensitivity", "--t2", "800 us", "--tau-i", "43 us", "--tau-r", "127 us",
                        "--sigma-r", "3.67"], capsys)
    doc = json.loads(out)
    validate_document(doc, "sensitivity")
    assert doc["eta_ac_nT_per_rtHz"] == pytest.approx(1.3, rel=0.08)


def test_gen_fixtures_round_trip(tmp_path, capsys):
    code, _, _ = run(["gen-fixtures", "--out", tmp_path, "--shots", 500], capsys)
    assert code == 0
    counts = read_histogram_csv(tmp_path / "histogram_0.csv")
    assert counts.sum() == 500
    code, out, _ = run(["fit", "--config", tmp_path / "fit_joint.json"], capsys)
    assert {"p_minus[0]", "p_minus[1]"} <= set(json.loads(out)["parameters"])


COMMANDS = [
    ["predict"],
    ["simulate", "--shots", "3000", "--seed", "4", "--out", "{d}/sim"],
    ["fit", "--config", "{fx}/fit_joint.json"],
    ["optimize", "--strategy", "RTI_SCC", "--tau-o", "800 us", "--t2", "800 us"],
    ["speedup-curve", "--tau-o-grid", "10us,1ms"],
    ["sensitivity"],
    ["gen-fixtures", "--out", "{d}/fx", "--shots", "300", "--seed", "2"],
]


def _outputs(d: Path) -> dict:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("argv", COMMANDS, ids=lambda a: a[0])
def test_commands_are_byte_deterministic(tmp_path, argv, capsys, monkeypatch):
    fx = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, fx)
    monkeypatch.chdir(tmp_path)
    results = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        d.mkdir()
        # same argv both times so the embedded manifest is identical
        shared = tmp_path / "work"
        if shared.exists():
            shutil.rmtree(shared)
        shared.mkdir()
        args = [a.format(d="work", fx="fixtures") for a in argv] + ["-o", "work/out.txt"]
        assert main(args) == 0
        results.append(_outputs(shared))
    assert results[0] == results[1]
    assert results[0]
