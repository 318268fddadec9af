"""Command-line front end.

Every command reads an optional JSON config (``--config`` or ``$NVRTI_CONFIG``),
applies command-line overrides, and writes JSON or CSV that embeds a run
manifest.  Output is deterministic for a given config and seed.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .charge import rates_at_power
from .config import (ConfigError, RunConfig, apply_overrides, load_config, run_manifest,
                     validate_document)
from .efficiency import (STRATEGIES, PhysicalConstants, ac_sensitivity, optimize_protocol,
                         speedup_curve, spin_readout_noise)
from .errors import DomainError, NumericalError
from .fitting import (CHARGE_PARAMS, CURVE_PARAMS, FitResult, HistogramDataset, fit_charge_histogram,
                      fit_curve, joint_fit_histograms)
from .protocol import predict, run_controller_batch, summarize
from .spin import gaussian_irf
from .telegraph import empirical_distribution
from .units import parse_list, parse_quantity

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3

_CURVE_DIMS = {"t2star": "time", "t2": "time", "t1": "time", "detuning": "rate", "hyperfine": "rate",
               "gamma0": "rate", "gamma1": "rate"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code 2 but a uniform prefix
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(text: str, output) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _csv_text(header, rows, manifest) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest: {json.dumps(manifest, sort_keys=True, separators=(',', ':'))}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def read_table_csv(path) -> tuple[list, list]:
    """Read a CSV written by this tool: skips ``#`` lines, returns (header, rows)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DomainError(f"{path}: empty CSV")
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = list(args.set or [])
    for flag, key in (("threshold", "protocol.threshold"), ("delay", "protocol.delay"),
                      ("probe_power", "protocol.probe_power"), ("probe_duration", "protocol.probe_duration"),
                      ("prior", "protocol.prior_p_minus"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def _manifest(args, cfg, inputs=()):
    return run_manifest(args.argv, cfg, cfg.seed, inputs, timestamp=getattr(args, "timestamp", False))


# --- commands -----------------------------------------------------------------


def cmd_predict(args) -> int:
    cfg = _config(args)
    proto = cfg.protocol()
    pred = predict(proto, cfg.calibration())
    doc = {"prediction": pred.to_dict(), "protocol": proto.to_dict(), "manifest": _manifest(args, cfg)}
    validate_document(doc, "prediction")
    _emit(_dump_json(doc), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    shots = args.shots if args.shots is not None else cfg.get("simulate", "shots", 10000)
    if int(shots) != shots or shots < 1:
        raise DomainError(f"shots must be a positive integer, got {shots}")
    retention = float(cfg.get("simulate", "pump_retention", 0.0))
    max_attempts = int(cfg.get("simulate", "max_attempts", 10**6))
    proto = cfg.protocol()
    cal = cfg.calibration()
    batch = run_controller_batch(proto, cal, int(shots), cfg.seed, max_attempts=max_attempts,
                                 pump_retention=retention)
    manifest = _manifest(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = zip(range(batch.runs), batch.attempts.tolist(), batch.elapsed.tolist(),
               batch.success_negative.astype(int).tolist(), batch.initial_negative.astype(int).tolist(),
               batch.trial_counter.tolist())
    (out / "runs.csv").write_text(_csv_text(
        ["run", "attempts", "elapsed_s", "success_negative", "initial_negative", "trial_counter"], rows, manifest))
    stats = summarize(batch)
    doc = {"summary": stats.to_dict(), "protocol": proto.to_dict(), "runs_csv": "runs.csv", "manifest": manifest}
    try:
        doc["prediction"] = predict(proto, cal).to_dict()
    except NumericalError:
        pass
    validate_document(doc, "emulate_summary")
    text = _dump_json(doc)
    (out / "summary.json").write_text(text)
    _emit(text, args.output)
    return EXIT_OK


def _resolve(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    if not p.is_absolute() and cfg.source is not None:
        p = Path(cfg.source).parent / p
    return p


def _read_curve(path):
    header, rows = read_table_csv(path)
    try:
        data = np.array([[float(v) for v in row] for row in rows])
    except ValueError:
        raise DomainError(f"{path}: non-numeric value in curve data") from None
    if data.size == 0:
        raise DomainError(f"{path}: no data rows")
    return header, data


def _fit_histograms(cfg, fitsec, datasets, seed):
    specs = fitsec["datasets"]
    sets = []
    for spec, path in zip(specs, datasets):
        if "t_r" not in spec:
            raise cfg.error("fit.datasets: each histogram needs t_r", ("fit", "datasets"))
        t_r = cfg._q("fit", "t_r", spec["t_r"], "time")
        power = cfg._q("fit", "power", spec["power"], "power") if "power" in spec else None
        sets.append(HistogramDataset.from_csv(path, t_r, power, spec.get("label")))
    init_raw = dict(fitsec.get("init", {}))
    init = {}
    if any(ds.power is not None for ds in sets):
        p = next(ds.power for ds in sets if ds.power is not None)
        r = rates_at_power(cfg.calibration(), p)
        init.update(gamma_minus=r.gamma_minus, gamma_zero=r.gamma_zero, gamma_ion=r.gamma_ion,
                    gamma_rec=r.gamma_rec)
    for k, v in init_raw.items():
        if k not in CHARGE_PARAMS:
            raise cfg.error(f"fit.init: unknown parameter {k!r}", ("fit", "init", k))
        init[k] = v if k == "p_minus" else cfg._q("fit", k, v, "rate")
    init.setdefault("p_minus", 0.5)
    tie = fitsec.get("tie_recombination")
    restarts = int(fitsec.get("restarts", 3))
    if len(sets) == 1:
        free = tuple(fitsec.get("free", ["p_minus"]))
        return fit_charge_histogram(sets[0], free=free, init=init, seed=seed, restarts=restarts,
                                    tie_recombination=tie)
    shared = tuple(fitsec.get("shared", []))
    per = tuple(p for p in fitsec.get("free", ["p_minus"]) if p == "p_minus")
    return joint_fit_histograms(sets, shared=shared, per_set_free=per, init=init, seed=seed,
                                restarts=restarts, tie_recombination=tie)


def _fit_curve(cfg, fitsec, kind, path):
    header, data = _read_curve(path)
    x = data[:, 0]
    if kind == "lifetime":
        y = np.concatenate([data[:, 1], data[:, 2]])
        sigma = np.concatenate([data[:, 3], data[:, 4]]) if data.shape[1] >= 5 else None
    else:
        y = data[:, 1]
        sigma = data[:, 2] if data.shape[1] >= 3 else None
    init = {}
    for k, v in fitsec.get("init", {}).items():
        if k not in CURVE_PARAMS[kind]:
            raise cfg.error(f"fit.init: unknown parameter {k!r} for {kind}", ("fit", "init", k))
        init[k] = cfg._q("fit", k, v, _CURVE_DIMS[k]) if isinstance(v, str) else float(v)
    irf = None
    if "irf_sigma" in fitsec:
        irf = gaussian_irf(cfg._q("fit", "irf_sigma", fitsec["irf_sigma"], "time"), float(x[1] - x[0]))
    free = fitsec.get("free")
    return fit_curve(kind, x, y, sigma, init=init, free=free, irf=irf)


def cmd_fit(args) -> int:
    cfg = _config(args)
    fitsec = cfg.raw.get("fit")
    if fitsec is None:
        raise ConfigError("config has no 'fit' section", cfg.source or "<config>")
    kind = fitsec.get("model", "histogram")
    paths = [_resolve(cfg, d["path"]) for d in fitsec["datasets"]]
    for p in paths:
        if not p.exists():
            raise DomainError(f"input file not found: {p}")
    if kind == "histogram":
        result = _fit_histograms(cfg, fitsec, paths, cfg.seed)
    else:
        if len(paths) != 1:
            raise cfg.error(f"{kind} fits take exactly one dataset", ("fit", "datasets"))
        result = _fit_curve(cfg, fitsec, kind, paths[0])
    doc = _fit_document(result, kind, fitsec)
    doc["manifest"] = _manifest(args, cfg, paths)
    validate_document(doc, "fit_result")
    _emit(_dump_json(doc), args.output)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _fit_document(result: FitResult, kind, fitsec) -> dict:
    d = result.to_dict()
    d["model"] = kind
    d["datasets"] = [dict(s) for s in fitsec["datasets"]]
    return d


def cmd_optimize(args) -> int:
    cfg = _config(args)
    strategy = args.strategy or cfg.get("optimize", "strategy")
    if strategy is None:
        raise DomainError("--strategy is required")
    tau_o = parse_quantity(args.tau_o, "time") if args.tau_o else cfg.quantity("optimize", "tau_o", "time")
    if tau_o is None:
        raise DomainError("--tau-o is required")
    t2 = parse_quantity(args.t2, "time") if args.t2 else cfg.quantity("optimize", "t2", "time")
    rep = optimize_protocol(strategy, tau_o, cfg.calibration(), cfg.spin_models(), cfg.search_grid(),
                            cfg.protocol(), t2=t2)
    doc = rep.to_dict()
    doc["manifest"] = _manifest(args, cfg)
    validate_document(doc, "efficiency_report")
    _emit(_dump_json(doc), args.output)
    return EXIT_OK


def cmd_speedup_curve(args) -> int:
    cfg = _config(args)
    if args.tau_o_grid:
        grid = parse_list(args.tau_o_grid, "time")
    else:
        raw = cfg.get("optimize", "tau_o_grid")
        grid = [parse_quantity(v, "time") for v in raw] if raw else list(np.geomspace(10e-6, 1e-3, 9))
    strategies = args.strategies.split(",") if args.strategies else cfg.get("optimize", "strategies", list(STRATEGIES))
    for s in strategies:
        if s not in STRATEGIES:
            raise DomainError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    rows = speedup_curve(grid, tuple(strategies), cfg.calibration(), cfg.spin_models(), cfg.search_grid(),
                         cfg.protocol())
    _emit(_csv_text(["tau_o", "strategy", "speedup"], rows, _manifest(args, cfg)), args.output)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = _config(args)

    def q(name, dim, default):
        v = getattr(args, name)
        if v is not None:
            return parse_quantity(v, dim)
        return cfg.quantity("sensitivity", name, dim, default)

    t2 = q("t2", "time", "800 us")
    tau_i = q("tau_i", "time", "43 us")
    tau_r = q("tau_r", "time", "127 us")
    snr = args.snr if args.snr is not None else cfg.get("sensitivity", "snr")
    sigma = args.sigma_r if args.sigma_r is not None else cfg.get("sensitivity", "sigma_r")
    if sigma is None:
        sigma = spin_readout_noise(snr) if snr is not None else 3.67
    g = args.g_factor if args.g_factor is not None else cfg.get("sensitivity", "g_factor", 2.003)
    eta = ac_sensitivity(t2, tau_i, tau_r, float(sigma), PhysicalConstants(g_factor=float(g)))
    doc = {"eta_ac": eta, "eta_ac_nT_per_rtHz": eta * 1e9,
           "inputs": {"t2": t2, "tau_i": tau_i, "tau_r": tau_r, "sigma_r": float(sigma), "g_factor": float(g)},
           "manifest": _manifest(args, cfg)}
    validate_document(doc, "sensitivity")
    _emit(_dump_json(doc), args.output)
    return EXIT_OK


FIXTURE_POWER = 100.0  # µW
FIXTURE_WINDOW = 5e-6
FIXTURE_POPULATIONS = (0.733, 0.994)


def cmd_gen_fixtures(args) -> int:
    """Write synthetic histograms and a matching joint-fit config."""
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rates = rates_at_power(cfg.calibration(), FIXTURE_POWER)
    manifest = _manifest(args, cfg)
    datasets = []
    for i, p in enumerate(FIXTURE_POPULATIONS):
        emp = empirical_distribution(rates, FIXTURE_WINDOW, p, args.shots, seed=cfg.seed + i)
        name = f"histogram_{i}.csv"
        lines = [f"manifest: {json.dumps(manifest, sort_keys=True, separators=(',', ':'))}",
                 f"p_minus={p} power_uW={FIXTURE_POWER} t_r_s={FIXTURE_WINDOW} shots={args.shots}"]
        emp.to_csv(out / name, header_lines=lines)
        datasets.append({"path": name, "t_r": "5 us", "power": "100 uW", "label": f"p_minus={p}"})
    fit_cfg = {"seed": cfg.seed, "fit": {"model": "histogram", "datasets": datasets, "shared": [],
                                         "free": ["p_minus"], "init": {"p_minus": 0.5}}}
    (out / "fit_joint.json").write_text(_dump_json(fit_cfg))
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: $NVRTI_CONFIG)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("-o", "--output", help="output file (default: stdout)")
    common.add_argument("--timestamp", action="store_true", help="record wall-clock time in the manifest")

    proto = argparse.ArgumentParser(add_help=False)
    proto.add_argument("--threshold", type=int, help="photon threshold nu")
    proto.add_argument("--delay", help="controller latency, e.g. '550 ns'")
    proto.add_argument("--probe-power", help="probe power, e.g. '6 uW'")
    proto.add_argument("--probe-duration", help="probe window, e.g. '5 us'")
    proto.add_argument("--prior", type=float, help="NV- probability before each probe")

    p = _Parser(prog="nvrti", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("predict", parents=[common, proto], help="analytic fidelity and time to initialize")
    sp.set_defaults(func=cmd_predict)

    for name in ("simulate", "emulate"):
        sp = sub.add_parser(name, parents=[common, proto], help="emulate the feedback controller")
        sp.add_argument("--shots", type=int, help="number of independent runs")
        sp.add_argument("--out", required=True, help="directory for runs.csv and summary.json")
        sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", parents=[common], help="fit histograms or spin curves named in the config")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("optimize", parents=[common], help="best protocol settings for one strategy")
    sp.add_argument("--strategy", choices=STRATEGIES)
    sp.add_argument("--tau-o", help="operation time, e.g. '800 us'")
    sp.add_argument("--t2", help="coherence time for the sensitivity estimate")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("speedup-curve", parents=[common], help="CSV of speedup vs operation time")
    sp.add_argument("--tau-o-grid", help="comma separated operation times, e.g. '10us,100us,1ms'")
    sp.add_argument("--strategies", help=f"comma separated subset of {','.join(STRATEGIES)}")
    sp.set_defaults(func=cmd_speedup_curve)

    sp = sub.add_parser("sensitivity", parents=[common], help="ac magnetic sensitivity")
    sp.add_argument("--t2")
    sp.add_argument("--tau-i")
    sp.add_argument("--tau-r")
    sp.add_argument("--sigma-r", type=float)
    sp.add_argument("--snr", type=float)
    sp.add_argument("--g-factor", type=float)
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("gen-fixtures", parents=[common], help="write synthetic histogram fixtures")
    sp.add_argument("--out", required=True)
    sp.add_argument("--shots", type=int, default=20000)
    sp.set_defaults(func=cmd_gen_fixtures)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"nvrti: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (DomainError, OSError) as exc:
        print(f"nvrti: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
