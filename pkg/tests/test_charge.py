import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvrti.charge import (CalibrationConstants, RateSet, load_calibration, rates_at_power,
                          recombination_from_steady_state, steady_state_population)
from nvrti.errors import DomainError


def test_bundled_calibration_values(cal):
    assert cal.c_minus == pytest.approx(895.0)
    assert cal.c_zero == pytest.approx(16.3)
    assert cal.dark == pytest.approx(39.0)
    assert cal.c_ion == pytest.approx(5.36)
    assert cal.c_rec == pytest.approx(0.082)
    assert cal.uncertainties()["c_ion"] == pytest.approx(0.27)


def test_zero_power_leaves_dark_counts(cal):
    r = rates_at_power(cal, 0.0)
    assert r.as_tuple() == (0.0, 39.0, 0.0, 0.0)


def test_rates_at_100uW(cal):
    r = rates_at_power(cal, 100.0)
    assert r.gamma_minus == pytest.approx(89.5e3)
    assert r.gamma_zero == pytest.approx(1.669e3)
    assert r.gamma_ion == pytest.approx(53.6e3)
    assert r.gamma_rec == pytest.approx(820.0)


def test_rates_at_6uW(cal):
    r = rates_at_power(cal, 6.0)
    assert r.gamma_minus == pytest.approx(5.37e3)
    assert r.gamma_ion == pytest.approx(192.96)


def test_negative_power_rejected(cal):
    with pytest.raises(DomainError):
        rates_at_power(cal, -1.0)


def test_saturation_warning(cal):
    with pytest.warns(UserWarning):
        rates_at_power(cal, 500.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rates_at_power(cal, 100.0)


def test_invalid_constants_rejected():
    with pytest.raises(DomainError):
        CalibrationConstants(-1.0, 16.3, 39.0, 5.36, 0.082)
    with pytest.raises(DomainError):
        CalibrationConstants(10.0, 16.3, 39.0, 5.36, 0.082)  # NV- must be brighter


def test_steady_state_examples():
    assert steady_state_population(RateSet(1.0, 1.0, 7.0, 7.0)) == 0.5
    assert steady_state_population(RateSet(1.0, 1.0, 7.0, 0.0)) == 0.0
    with pytest.raises(DomainError):
        steady_state_population(RateSet(1.0, 1.0, 0.0, 0.0))


def test_steady_state_from_table_constants(cal):
    assert steady_state_population(rates_at_power(cal, 37.0)) == pytest.approx(0.082 / (5.36 + 0.082))
    assert steady_state_population(rates_at_power(cal, 37.0)) == pytest.approx(0.0151, abs=5e-5)


def test_steady_state_independent_of_power(cal):
    ref = steady_state_population(rates_at_power(cal, 1.0))
    for p in np.geomspace(0.1, 200, 17):
        assert steady_state_population(rates_at_power(cal, p)) == pytest.approx(ref, rel=1e-12)


def test_recombination_examples():
    assert recombination_from_steady_state(53.6e3, 0.0115) == pytest.approx(623.5, abs=0.1)
    assert recombination_from_steady_state(1234.0, 0.5) == pytest.approx(1234.0)
    assert recombination_from_steady_state(0.0, 0.3) == 0.0


@given(st.floats(0, 150), st.floats(0, 150))
def test_rates_monotone_in_power(p1, p2):
    from nvrti.charge import default_calibration

    cal = default_calibration()
    lo, hi = sorted((p1, p2))
    a, b = rates_at_power(cal, lo), rates_at_power(cal, hi)
    assert all(x <= y for x, y in zip(a.as_tuple(), b.as_tuple()))


@given(st.floats(1e-3, 1e6), st.floats(-3, 3))
def test_recombination_inverts_steady_state(gi, log_ratio):
    # 1 - p loses ~|ratio| * eps relative accuracy, so keep the ratio within 1e3
    gr = gi * 10**log_ratio
    r = RateSet(1.0, 0.5, gi, gr)
    assert recombination_from_steady_state(gi, steady_state_population(r)) == pytest.approx(gr, rel=1e-12)


def test_swap_and_replace():
    r = RateSet(4.0, 1.0, 3.0, 2.0)
    assert r.swapped().as_tuple() == (1.0, 4.0, 2.0, 3.0)
    assert r.with_(gamma_ion=9.0).gamma_ion == 9.0


def test_load_calibration_file(tmp_path):
    doc = {"calibration": {"c_minus": "1 kHz/uW", "c_zero": "10 Hz/uW", "dark": "0 Hz",
                           "c_ion": "2 Hz/uW^2", "c_rec": "0.1 Hz/uW^2"}}
    p = tmp_path / "cal.json"
    p.write_text(json.dumps(doc))
    cal = load_calibration(p)
    assert cal.c_minus == 1000.0 and cal.c_rec == pytest.approx(0.1)
    doc["calibration"]["c_rec"] = 0.1
    p.write_text(json.dumps(doc))
    with pytest.raises(DomainError):
        load_calibration(p)
