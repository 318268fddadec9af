import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvrti.charge import RateSet, rates_at_power
from nvrti.errors import DomainError
from nvrti.photon import ChargeState, distribution_conditional, tail_probability
from nvrti.spin import (PL, PL_DEFAULT, SCC, SCC_DEFAULT, CoherenceModel, LifetimeModel,
                        SpinObservableModel, coherence_model_eval, convolve_with_irf, gaussian_irf,
                        lifetime_response, observable_with_fidelity, pl_snr,
                        populations_before_after, scc_observed_probability, scc_snr, snr_at_fidelity)


def test_observable_examples():
    m = PL_DEFAULT
    assert observable_with_fidelity(m, 0, 1.0) == m.s_tilde_0
    assert observable_with_fidelity(m, 1, 0.0) == m.epsilon
    assert observable_with_fidelity(m, 0, 0.75) == pytest.approx(0.09664 * 0.75 + 2.703e-6 * 0.25, rel=1e-14)
    assert observable_with_fidelity(m, 0, 0.75) == pytest.approx(0.07248, abs=1e-5)
    with pytest.raises(DomainError):
        observable_with_fidelity(m, 2, 0.5)
    with pytest.raises(DomainError):
        observable_with_fidelity(m, 0, 1.5)


def test_pl_snr_examples():
    assert pl_snr(0.3, 0.3) == 0.0
    assert pl_snr(0.09664, 0.05254) == pytest.approx(0.114, abs=1e-3)
    with pytest.raises(DomainError):
        pl_snr(0.0, 0.0)


@given(st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(1e-2, 100))
def test_pl_snr_homogeneity(s0, s1, k):
    assert pl_snr(k * s0, k * s1) == pytest.approx(math.sqrt(k) * pl_snr(s0, s1), rel=1e-12, abs=1e-300)


def test_scc_snr_examples():
    assert scc_snr(0.4, 0.4) == 0.0
    assert scc_snr(0.1581, 0.4778) == pytest.approx(0.52, abs=0.03)
    with pytest.raises(DomainError):
        scc_snr(0.0, 1.0)
    with pytest.raises(DomainError):
        scc_snr(-0.1, 0.5)


def test_model_validation():
    with pytest.raises(DomainError):
        SpinObservableModel("bogus", 1, 1, 0)
    with pytest.raises(DomainError):
        SpinObservableModel(SCC, 1.2, 0.4, 0.0)
    assert SCC_DEFAULT.with_contrast(1.0) == SCC_DEFAULT
    half = SCC_DEFAULT.with_contrast(0.5)
    assert half.s_tilde_1 - half.s_tilde_0 == pytest.approx(0.5 * (SCC_DEFAULT.s_tilde_1 - SCC_DEFAULT.s_tilde_0))


@pytest.mark.parametrize("model", [PL_DEFAULT, SCC_DEFAULT])
def test_snr_monotone_in_fidelity(model):
    f = np.linspace(0, 1, 201)
    snr = snr_at_fidelity(model, f)
    assert np.all(np.diff(snr) >= -1e-15)


def test_observable_affine_in_fidelity():
    f = np.linspace(0, 1, 11)
    vals = np.array([observable_with_fidelity(SCC_DEFAULT, 1, x) for x in f])
    assert np.allclose(np.diff(vals, 2), 0, atol=1e-15)


def test_scc_observed_probability_limits(rates100):
    qm = tail_probability(distribution_conditional(rates100, 5e-6, ChargeState.NEGATIVE), 1)
    q0 = tail_probability(distribution_conditional(rates100, 5e-6, ChargeState.NEUTRAL), 1)
    assert scc_observed_probability(1.0, rates100, 5e-6, 1) == pytest.approx(qm, rel=1e-12)
    assert scc_observed_probability(0.0, rates100, 5e-6, 1) == pytest.approx(q0, rel=1e-12)
    ideal = RateSet(1e9, 0.0, 0.0, 0.0)
    assert scc_observed_probability(0.37, ideal, 5e-6, 1) == pytest.approx(0.37, abs=1e-12)
    with pytest.raises(DomainError):
        scc_observed_probability(1.2, rates100, 5e-6, 1)


def test_scc_observed_probability_round_trip(cal):
    """A mixture at b_true, thresholded, is recovered by fitting the histogram."""
    from nvrti.fitting import HistogramDataset, fit_charge_histogram
    from nvrti.telegraph import empirical_distribution

    r = rates_at_power(cal, 20.0)
    b_true = 0.4778
    emp = empirical_distribution(r, 100e-6, b_true, 50_000, seed=8)
    init = dict(zip(("gamma_minus", "gamma_zero", "gamma_ion", "gamma_rec"), r.as_tuple()), p_minus=0.5)
    fit = fit_charge_histogram(HistogramDataset(emp.counts, 100e-6), ("p_minus",), init, seed=0)
    assert abs(fit.parameters["p_minus"] - b_true) < 3 * fit.standard_errors["p_minus"]
    observed = (emp.counts[1:].sum()) / emp.shots
    expected = scc_observed_probability(b_true, r, 100e-6, 1)
    assert abs(observed - expected) < 4 * math.sqrt(expected * (1 - expected) / emp.shots)


def test_populations_examples():
    b, a = populations_before_after(1.0, 1.0)
    np.testing.assert_array_equal(a, [0.0, 1.0, 0.0])
    b, a = populations_before_after(0.7, 0.0)
    np.testing.assert_array_equal(a, b)
    _, a = populations_before_after(0.915, 0.88)
    assert a[2] == pytest.approx(0.915 * 0.12 + 0.0425 * 0.88, rel=1e-14)
    assert a[2] == pytest.approx(0.1472, abs=1e-4)
    with pytest.raises(DomainError):
        populations_before_after(1.1, 0.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_populations_sum_to_one(p0, f):
    b, a = populations_before_after(p0, f)
    assert b.sum() == pytest.approx(1.0, abs=1e-15)
    assert a.sum() == pytest.approx(1.0, abs=1e-15)


def test_lifetime_response_examples():
    m = LifetimeModel(p0=0.915, gamma0_opt=1 / 12.5e-9, gamma1_opt=1 / 7.48e-9, amplitude_before=2.0,
                      amplitude_after=1.5, background=0.1)
    assert lifetime_response(m, "before", 0.0) == pytest.approx(2.1)
    assert lifetime_response(m, "after", 0.0) == pytest.approx(1.6)
    assert lifetime_response(m, "before", -1e-9) == pytest.approx(0.1)
    same = LifetimeModel(p0=0.3, gamma0_opt=1e8, gamma1_opt=1e8)
    t = np.linspace(0, 50e-9, 11)
    np.testing.assert_allclose(lifetime_response(same, "after", t), np.exp(-1e8 * t), rtol=1e-14)
    with pytest.raises(DomainError):
        lifetime_response(m, "during", t)


def test_convolution_examples():
    sig = np.random.default_rng(0).random(50)
    np.testing.assert_array_equal(convolve_with_irf(sig, [1.0]), sig)
    k = gaussian_irf(1e-9, 0.1e-9)
    flat = convolve_with_irf(np.full(400, 3.0), k)
    h = len(k) // 2
    np.testing.assert_allclose(flat[h:-h], 3.0, rtol=1e-12)
    with pytest.raises(DomainError):
        convolve_with_irf(sig, [0.5, 0.5])
    with pytest.raises(DomainError):
        convolve_with_irf(sig, [0.2, 0.2, 0.2])
    with pytest.raises(DomainError):
        convolve_with_irf(sig, [0.0, 1.0, 0.0], dt_signal=1e-10, dt_irf=2e-10)


def test_convolution_preserves_integral():
    dt = 0.05e-9
    t = np.arange(-20e-9, 120e-9, dt)
    sig = np.where(t >= 0, np.exp(-np.clip(t, 0, None) / 12.5e-9), 0.0)
    sig[t > 100e-9] = 0.0  # keep support away from the edges
    k = gaussian_irf(1e-9, dt)
    out = convolve_with_irf(sig, k)
    assert out.sum() == pytest.approx(sig.sum(), rel=1e-9)


def test_coherence_examples():
    r = CoherenceModel("ramsey", offset=0.2, amplitude=0.1, timescale=2e-6, detuning=5e6, hyperfine=2.16e6)
    assert coherence_model_eval(r, 0.0) == pytest.approx(0.2 + 3 * 0.1)
    h = CoherenceModel("hahn", offset=0.2, amplitude=0.1, timescale=852e-6, stretch=2.85)
    assert coherence_model_eval(h, 852e-6) == pytest.approx(0.2 + 0.1 / math.e)
    t1 = CoherenceModel("t1", offset=0.0, amplitude=1.0, timescale=5.3e-3)
    assert coherence_model_eval(t1, 5.3e-3) == pytest.approx(1 / math.e)
    with pytest.raises(DomainError):
        CoherenceModel("rabi", 0, 1, 1e-6)
    with pytest.raises(DomainError):
        CoherenceModel("hahn", 0, 1, 0.0)


def test_kind_constants():
    assert PL_DEFAULT.kind == PL and SCC_DEFAULT.kind == SCC
