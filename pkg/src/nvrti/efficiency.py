"""Readout efficiency, speedup, sensitivity, and protocol optimization.

The readout efficiency of a measurement cycle is

    xi = SNR / sqrt(tau_I + tau_O + tau_R)

so that the total SNR after an integration time ``T`` is ``xi * sqrt(T)``.
The speedup of a protocol over the baseline (steady-state initialization and
photoluminescence readout) is ``(xi / xi_baseline)**2``.

:func:`optimize_protocol` does an exhaustive grid search.  Initialization and
readout settings enter the efficiency separably, so the grid is evaluated as
an outer product of an initialization table and a readout table, both cached.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import constants as sc

from .charge import CalibrationConstants, rates_at_power
from .errors import DomainError
from .photon import ChargeState, count_cutoff, distribution_conditional, tail_array
from .protocol import ProtocolConfig, delay_error
from .spin import PL, PL_DEFAULT, SCC_DEFAULT, SpinObservableModel, pl_snr, scc_snr

STRATEGIES = ("SSI_PL", "RTI_PL", "SSI_SCC", "RTI_SCC")
BASELINE = "SSI_PL"
SSI_FIDELITY = 0.75
SSI_INIT_TIME = 2e-6
PL_WINDOW = 250e-9


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = sc.hbar
    g_factor: float = 2.003
    mu_b: float = sc.physical_constants["Bohr magneton"][0]

    def __post_init__(self):
        if not (self.hbar > 0 and self.g_factor > 0 and self.mu_b > 0):
            raise DomainError("physical constants must be > 0")


def readout_efficiency(snr, tau_i, tau_o, tau_r):
    """``SNR / sqrt(tau_I + tau_O + tau_R)`` in Hz^1/2."""
    if min(np.min(tau_i), np.min(tau_o), np.min(tau_r)) < 0:
        raise DomainError("durations must be >= 0")
    total = np.asarray(tau_i) + np.asarray(tau_o) + np.asarray(tau_r)
    if np.any(total <= 0):
        raise DomainError("total cycle time must be > 0")
    out = np.asarray(snr) / np.sqrt(total)
    return float(out) if out.ndim == 0 else out


def speedup(xi, xi_baseline):
    """Reduction in integration time relative to the baseline."""
    if np.any(np.asarray(xi_baseline) <= 0):
        raise DomainError("baseline efficiency must be > 0")
    out = (np.asarray(xi) / np.asarray(xi_baseline)) ** 2
    return float(out) if out.ndim == 0 else out


def spin_readout_noise(snr: float) -> float:
    """Readout noise relative to a projective measurement, ``sqrt(1 + 2/SNR^2)``."""
    if not snr > 0:
        raise DomainError("SNR must be > 0 (noise diverges at zero SNR)")
    return math.sqrt(1.0 + 2.0 / snr**2)


def ac_sensitivity(t2: float, tau_i: float, tau_r: float, sigma_r: float,
                   constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Hahn-echo ac magnetic sensitivity in T/Hz^1/2."""
    if not t2 > 0:
        raise DomainError("T2 must be > 0")
    prefactor = math.pi * constants.hbar / (2 * constants.g_factor * constants.mu_b)
    return prefactor * math.sqrt(t2 + tau_i + tau_r) / t2 * sigma_r


# --- grid search -----------------------------------------------------------


def _geom(lo, hi, n):
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


@dataclass(frozen=True)
class SearchGrid:
    """Lattice of protocol settings searched by :func:`optimize_protocol`.

    Times in seconds, powers in µW.
    """

    probe_powers: tuple = _geom(1.0, 200.0, 25)
    probe_durations: tuple = _geom(0.5e-6, 20e-6, 12)
    thresholds: tuple = (1, 2, 3)
    readout_durations: tuple = _geom(10e-6, 500e-6, 15)
    readout_powers: tuple = _geom(5.0, 100.0, 10)
    readout_thresholds: tuple = tuple(range(1, 11))

    def __post_init__(self):
        for name in ("probe_powers", "probe_durations", "thresholds", "readout_durations",
                     "readout_powers", "readout_thresholds"):
            if len(getattr(self, name)) == 0:
                raise DomainError(f"search grid axis {name} is empty")


@dataclass(frozen=True, eq=False)
class InitTable:
    power: np.ndarray
    duration: np.ndarray
    threshold: np.ndarray
    fidelity: np.ndarray
    init_time: np.ndarray


@dataclass(frozen=True, eq=False)
class ReadoutTable:
    duration: np.ndarray
    power: np.ndarray
    threshold: np.ndarray
    q_minus: np.ndarray
    q_zero: np.ndarray


def _tail_pair(cal, power, t):
    rates = rates_at_power(cal, power)
    n_max = count_cutoff(rates, t)
    tm = tail_array(distribution_conditional(rates, t, ChargeState.NEGATIVE, n_max).pmf)
    t0 = tail_array(distribution_conditional(rates, t, ChargeState.NEUTRAL, n_max).pmf)
    return rates, tm, t0


def _tail_at(tails, nu):
    return tails[nu] if nu < len(tails) else 0.0


@lru_cache(maxsize=32)
def init_table(cal: CalibrationConstants, grid: SearchGrid, base: ProtocolConfig) -> InitTable:
    """Fidelity and initialization time for every RTI setting on the grid."""
    rows = []
    for p in grid.probe_powers:
        for t in grid.probe_durations:
            rates, tm, t0 = _tail_pair(cal, p, t)
            eps_d = delay_error(rates.gamma_ion, base.delay)
            cycle = base.pump_duration + base.overhead + t
            for nu in grid.thresholds:
                prior = base.prior_p_minus
                q = prior * _tail_at(tm, nu) + (1 - prior) * _tail_at(t0, nu)
                if q < 1e-300:
                    continue
                eps_t = (1 - prior) * _tail_at(t0, nu) / q
                rows.append((p, t, nu, (1 - eps_t) * (1 - eps_d), cycle / q))
    a = np.array(rows)
    return InitTable(a[:, 0], a[:, 1], a[:, 2].astype(int), a[:, 3], a[:, 4])


@lru_cache(maxsize=32)
def readout_table(cal: CalibrationConstants, grid: SearchGrid) -> ReadoutTable:
    """Threshold-crossing probabilities for every charge readout setting."""
    rows = []
    for t in grid.readout_durations:
        for p in grid.readout_powers:
            _, tm, t0 = _tail_pair(cal, p, t)
            for nu in grid.readout_thresholds:
                rows.append((t, p, nu, _tail_at(tm, nu), _tail_at(t0, nu)))
    a = np.array(rows)
    return ReadoutTable(a[:, 0], a[:, 1], a[:, 2].astype(int), a[:, 3], a[:, 4])


@dataclass(frozen=True)
class SpinModels:
    pl: SpinObservableModel = PL_DEFAULT
    scc: SpinObservableModel = SCC_DEFAULT


@dataclass(frozen=True)
class EfficiencyReport:
    strategy: str
    snr: float
    tau_i: float
    tau_o: float
    tau_r: float
    xi: float
    speedup: float
    sigma_r: float
    fidelity: float
    observables: tuple  # (signal for m_s=0, signal for m_s=1) as measured
    chosen_params: dict = field(default_factory=dict)
    eta_ac: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observables"] = list(self.observables)
        return d


def _argbest(xi, tau_i, tau_r) -> int:
    xi, tau_i, tau_r = (np.ravel(a) for a in np.broadcast_arrays(xi, tau_i, tau_r))
    best = np.nanmax(xi)
    cand = np.nonzero(xi >= best * (1 - 1e-12))[0]
    order = np.lexsort((tau_r[cand], tau_i[cand]))
    return int(cand[order[0]])


def _pl_signals(model, f):
    s0 = model.s_tilde_0 * f + model.epsilon * (1 - f)
    s1 = model.s_tilde_1 * f + model.epsilon * (1 - f)
    return s0, s1


def _scc_signals(model, f, qm, q0):
    b0 = model.s_tilde_0 * f + model.epsilon * (1 - f)
    b1 = model.s_tilde_1 * f + model.epsilon * (1 - f)
    return b0 * qm + (1 - b0) * q0, b1 * qm + (1 - b1) * q0


def _baseline_xi(tau_o, models: SpinModels):
    s0, s1 = _pl_signals(models.pl, SSI_FIDELITY)
    return readout_efficiency(pl_snr(s0, s1), SSI_INIT_TIME, tau_o, PL_WINDOW)


def optimize_protocol(strategy: str, tau_o: float, cal: CalibrationConstants,
                      models: SpinModels = SpinModels(), grid: SearchGrid = SearchGrid(),
                      base: ProtocolConfig | None = None, t2: float | None = None,
                      constants: PhysicalConstants = PhysicalConstants()) -> EfficiencyReport:
    """Maximize the readout efficiency of one strategy at operation time ``tau_o``.

    Ties in efficiency go to the shorter initialization, then the shorter
    readout.  ``base`` supplies the pump, overhead, delay and prior used for
    RTI settings; ``t2`` adds the ac sensitivity to the report.
    """
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if tau_o < 0:
        raise DomainError("tau_o must be >= 0")
    if base is None:
        base = ProtocolConfig(probe_power=1.0, probe_duration=1e-6)
    init_kind, readout_kind = strategy.split("_")
    params: dict = {}

    if init_kind == "RTI":
        it = init_table(cal, grid, base)
        F, tau_i = it.fidelity, it.init_time
    else:
        F, tau_i = np.array([SSI_FIDELITY]), np.array([SSI_INIT_TIME])

    if readout_kind == "PL":
        s0, s1 = _pl_signals(models.pl, F)
        snr = pl_snr(s0, s1)
        tau_r = np.full_like(F, PL_WINDOW)
        xi = readout_efficiency(snr, tau_i, tau_o, tau_r)
        k = _argbest(xi, tau_i, tau_r)
        i_idx, snr_v, tr_v, obs = k, float(np.atleast_1d(snr)[k]), PL_WINDOW, (float(np.atleast_1d(s0)[k]), float(np.atleast_1d(s1)[k]))
        params["pl_window"] = PL_WINDOW
    else:
        rt = readout_table(cal, grid)
        Fm = F[:, None]
        o0, o1 = _scc_signals(models.scc, Fm, rt.q_minus[None, :], rt.q_zero[None, :])
        var = o0 * (1 - o0) + o1 * (1 - o1)
        snr = np.where(var > 0, np.abs(o0 - o1) / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
        TI = np.broadcast_to(tau_i[:, None], snr.shape)
        TR = np.broadcast_to(rt.duration[None, :], snr.shape)
        xi = readout_efficiency(snr, TI, tau_o, TR)
        k = _argbest(xi, TI, TR)
        i_idx, j = np.unravel_index(k, snr.shape)
        snr_v, tr_v = float(snr[i_idx, j]), float(rt.duration[j])
        obs = (float(o0[i_idx, j]), float(o1[i_idx, j]))
        params.update(readout_duration=tr_v, readout_power=float(rt.power[j]),
                      readout_threshold=int(rt.threshold[j]))
    if init_kind == "RTI":
        params.update(probe_power=float(it.power[i_idx]), probe_duration=float(it.duration[i_idx]),
                      threshold=int(it.threshold[i_idx]))
    f_v = float(np.atleast_1d(F)[i_idx])
    ti_v = float(np.atleast_1d(tau_i)[i_idx])
    params["fidelity"] = f_v
    xi_v = readout_efficiency(snr_v, ti_v, tau_o, tr_v)
    sigma = spin_readout_noise(snr_v) if snr_v > 0 else math.inf
    eta = ac_sensitivity(t2, ti_v, tr_v, sigma, constants) if t2 is not None else None
    return EfficiencyReport(
        strategy=strategy, snr=snr_v, tau_i=ti_v, tau_o=float(tau_o), tau_r=tr_v, xi=xi_v,
        speedup=speedup(xi_v, _baseline_xi(tau_o, models)), sigma_r=sigma, fidelity=f_v,
        observables=obs, chosen_params=params, eta_ac=eta,
    )


def speedup_curve(tau_o_grid, strategies=STRATEGIES, cal: CalibrationConstants | None = None,
                  models: SpinModels = SpinModels(), grid: SearchGrid = SearchGrid(),
                  base: ProtocolConfig | None = None):
    """Rows of ``(tau_o, strategy, speedup)`` against the baseline protocol."""
    if len(tau_o_grid) == 0:
        raise DomainError("tau_o grid is empty")
    if cal is None:
        from .charge import default_calibration

        cal = default_calibration()
    rows = []
    for tau_o in tau_o_grid:
        for s in strategies:
            rep = optimize_protocol(s, tau_o, cal, models, grid, base)
            rows.append((float(tau_o), s, rep.speedup))
    return rows


def break_even(tau_o, speedups):
    """Operation times where a speedup curve crosses 1 (log-linear interpolation)."""
    tau_o = np.asarray(tau_o, dtype=float)
    d = np.asarray(speedups, dtype=float) - 1.0
    out = []
    for i in range(len(d) - 1):
        if d[i] == 0:
            out.append(float(tau_o[i]))
        elif d[i] * d[i + 1] < 0:
            x0, x1 = np.log(tau_o[i]), np.log(tau_o[i + 1])
            out.append(float(np.exp(x0 - d[i] * (x1 - x0) / (d[i + 1] - d[i]))))
    if len(d) and d[-1] == 0:
        out.append(float(tau_o[-1]))
    return out


def simulate_total_snr(report: EfficiencyReport, repetitions, replicates: int = 100, seed: int = 0):
    """Monte Carlo total SNR after ``N`` repeated cycles, for each ``N``.

    Each cycle yields a Poisson photon count (PL) or a Bernoulli NV- outcome
    (SCC) per spin state with the report's observables as means.  The total
    SNR is the difference of the averaged signals over its estimated standard
    error.  Returns the mean over ``replicates`` for each ``N``.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 7))))
    m0, m1 = report.observables
    pl = report.strategy.endswith("PL")
    out = []
    for n in repetitions:
        n = int(n)
        if pl:
            x0 = rng.poisson(m0 * n, replicates) / n
            x1 = rng.poisson(m1 * n, replicates) / n
            var = x0 + x1
        else:
            x0 = rng.binomial(n, m0, replicates) / n
            x1 = rng.binomial(n, m1, replicates) / n
            var = x0 * (1 - x0) + x1 * (1 - x1)
        out.append(float(np.mean(np.abs(x0 - x1) / np.sqrt(var / n))))
    return np.array(out)
