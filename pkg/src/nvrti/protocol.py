"""Real-time charge initialization: analytic predictions and a controller emulator.

Each attempt pumps the charge with green light, waits out the sequence
overhead, then probes with red light while counting photons.  Reaching the
photon threshold ``nu`` ends the loop; the controller then needs ``delay``
seconds to stop, during which NV- may still ionize.

Analytic model (prior ``P`` = NV- probability before each probe)::

    eps_T = sum_{n>=nu} (1-P) p(n|0) / sum_{n>=nu} [P p(n|-) + (1-P) p(n|0)]
    eps_D = 1 - exp(-delay * gamma_ion)
    F     = (1 - eps_T) (1 - eps_D)
    n_bar = 1 / sum_{n>=nu} [P p(n|-) + (1-P) p(n|0)]
    tau_I = (pump + overhead + probe) * n_bar
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .charge import CalibrationConstants, RateSet, rates_at_power
from .errors import ConvergenceError, DomainError, UnreachableThresholdError
from .photon import ChargeState, count_cutoff, distribution_conditional, tail_probability
from .telegraph import BLOCK, block_rng, sample_threshold_crossing

COUNTER_BITS = 6
COUNTER_MODULUS = 2**COUNTER_BITS
MAX_ATTEMPTS = 10**6


@dataclass(frozen=True)
class ProtocolConfig:
    """Control parameters of the initialization loop (seconds, µW)."""

    probe_power: float
    probe_duration: float
    threshold: int = 1
    pump_duration: float = 0.5e-6
    pump_power: float = 500.0
    overhead: float = 1.5e-6
    delay: float = 550e-9
    prior_p_minus: float = 0.75

    def __post_init__(self):
        if self.probe_power < 0:
            raise DomainError("probe_power must be >= 0")
        for name in ("probe_duration", "pump_duration", "overhead"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if self.delay < 0:
            raise DomainError("delay must be >= 0")
        if int(self.threshold) != self.threshold or not 1 <= self.threshold < COUNTER_MODULUS:
            raise DomainError(
                f"threshold must be an integer in [1, {COUNTER_MODULUS - 1}] "
                f"for a {COUNTER_BITS}-bit counter, got {self.threshold}"
            )
        if not 0 <= self.prior_p_minus <= 1:
            raise DomainError("prior_p_minus must lie in [0, 1]")

    @property
    def cycle_time(self) -> float:
        return self.pump_duration + self.overhead + self.probe_duration

    def replace(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProtocolPrediction:
    epsilon_t: float
    epsilon_d: float
    fidelity: float
    avg_attempts: float
    init_time: float

    def to_dict(self) -> dict:
        return asdict(self)


def _tails(rates: RateSet, t_probe: float, nu: int):
    n_max = count_cutoff(rates, t_probe)
    neg = distribution_conditional(rates, t_probe, ChargeState.NEGATIVE, n_max)
    neu = distribution_conditional(rates, t_probe, ChargeState.NEUTRAL, n_max)
    return tail_probability(neg, nu), tail_probability(neu, nu)


def success_probability(rates: RateSet, t_probe: float, nu: int, prior: float) -> float:
    """Probability that one probe reaches the threshold."""
    if nu == 0:
        return 1.0
    tm, t0 = _tails(rates, t_probe, nu)
    return prior * tm + (1.0 - prior) * t0


def threshold_error(rates: RateSet, t_probe: float, nu: int, prior: float) -> float:
    """Probability that a threshold event came from a probe started in NV0."""
    if not 0 <= prior <= 1:
        raise DomainError("prior must lie in [0, 1]")
    if nu == 0:
        return 1.0 - prior
    tm, t0 = _tails(rates, t_probe, nu)
    denom = prior * tm + (1.0 - prior) * t0
    if denom < 1e-300:
        raise UnreachableThresholdError(f"threshold {nu} is unreachable (probability {denom:.3g})")
    return (1.0 - prior) * t0 / denom


def delay_error(gamma_ion: float, delay: float) -> float:
    """Probability that NV- ionizes during the control latency."""
    if delay < 0:
        raise DomainError("delay must be >= 0")
    return -math.expm1(-delay * gamma_ion)


def initialization_time(cfg: ProtocolConfig, n_bar: float) -> float:
    """Mean time to initialize, charging the full probe to every attempt.

    Because real probes stop at the threshold this is an upper bound on the
    emulated mean elapsed time.
    """
    if n_bar < 1:
        raise DomainError("n_bar must be >= 1")
    return cfg.cycle_time * n_bar


def predict(cfg: ProtocolConfig, cal: CalibrationConstants) -> ProtocolPrediction:
    """Threshold error, delay error, fidelity, mean attempts and init time."""
    rates = rates_at_power(cal, cfg.probe_power)
    tm, t0 = _tails(rates, cfg.probe_duration, cfg.threshold)
    prior = cfg.prior_p_minus
    q = prior * tm + (1.0 - prior) * t0
    if q < 1e-300:
        raise UnreachableThresholdError(
            f"threshold {cfg.threshold} is unreachable (probability {q:.3g})")
    eps_t = (1.0 - prior) * t0 / q
    eps_d = delay_error(rates.gamma_ion, cfg.delay)
    n_bar = 1.0 / q
    return ProtocolPrediction(
        epsilon_t=eps_t,
        epsilon_d=eps_d,
        fidelity=(1.0 - eps_t) * (1.0 - eps_d),
        avg_attempts=n_bar,
        init_time=initialization_time(cfg, n_bar),
    )


def initialization_fidelity(cfg: ProtocolConfig, cal: CalibrationConstants) -> ProtocolPrediction:
    return predict(cfg, cal)


def average_attempts(cfg: ProtocolConfig, cal: CalibrationConstants) -> float:
    return predict(cfg, cal).avg_attempts


# --- controller emulation -------------------------------------------------


@dataclass(frozen=True)
class ControllerOutcome:
    attempts: int
    elapsed: float
    success_state: ChargeState
    trial_counter: int
    counter_trace: tuple | None = None
    initial_state: ChargeState | None = None


@dataclass(frozen=True, eq=False)
class ControllerBatch:
    """Per-run results of many independent controller runs."""

    attempts: np.ndarray
    elapsed: np.ndarray
    success_negative: np.ndarray
    initial_negative: np.ndarray
    probe_time: np.ndarray
    seed: int

    @property
    def runs(self) -> int:
        return len(self.attempts)

    @property
    def trial_counter(self) -> np.ndarray:
        return self.attempts % COUNTER_MODULUS


def _run_block(cfg: ProtocolConfig, rates: RateSet, rng, runs: int, max_attempts: int,
               pump_retention: float, trace: list | None):
    attempts = np.zeros(runs, dtype=np.int64)
    elapsed = np.zeros(runs)
    probe_time = np.zeros(runs)
    success = np.zeros(runs, dtype=bool)
    initial = np.zeros(runs, dtype=bool)
    state = rng.random(runs) < cfg.prior_p_minus
    active = np.arange(runs)
    while active.size:
        if attempts[active[0]] >= max_attempts:
            raise ConvergenceError(
                f"controller exceeded {max_attempts} attempts without reaching threshold",
                achieved=max_attempts,
            )
        k = active.size
        fresh = rng.random(k) < cfg.prior_p_minus
        if pump_retention > 0:
            keep = rng.random(k) < pump_retention
            start = np.where(keep, state[active], fresh)
        else:
            start = fresh
        trig, when, neg_end, counts = sample_threshold_crossing(
            rng, rates, cfg.probe_duration, start, cfg.threshold)
        if trace is not None:
            trace.extend(int(c) % COUNTER_MODULUS for c in counts)
        attempts[active] += 1
        elapsed[active] += cfg.pump_duration + cfg.overhead + when
        probe_time[active] += when
        state[active] = neg_end
        done = active[trig]
        if done.size:
            neg = neg_end[trig]
            # only ionization is possible while the controller halts
            if cfg.delay > 0 and rates.gamma_ion > 0:
                ionized = rng.exponential(1.0 / rates.gamma_ion, done.size) < cfg.delay
                neg = neg & ~ionized
            success[done] = neg
            initial[done] = start[trig]
        active = active[~trig]
    return attempts, elapsed, success, initial, probe_time


def run_controller_batch(cfg: ProtocolConfig, cal: CalibrationConstants, runs: int, seed: int = 0,
                         max_attempts: int = MAX_ATTEMPTS, pump_retention: float = 0.0) -> ControllerBatch:
    """Emulate ``runs`` independent initialization loops.

    ``pump_retention`` is the probability that a pump leaves the charge state
    left by the previous probe untouched instead of redrawing it from the
    prior; 0 reproduces the fixed-prior assumption of the analytic model.
    """
    if runs < 1:
        raise DomainError("runs must be >= 1")
    if not 0 <= pump_retention <= 1:
        raise DomainError("pump_retention must lie in [0, 1]")
    rates = rates_at_power(cal, cfg.probe_power)
    parts = []
    for block, start in enumerate(range(0, runs, BLOCK)):
        size = min(BLOCK, runs - start)
        parts.append(_run_block(cfg, rates, block_rng(seed, block), size, max_attempts,
                                pump_retention, None))
    cols = [np.concatenate(c) for c in zip(*parts)]
    return ControllerBatch(*cols, seed=int(seed))


def run_controller(cfg: ProtocolConfig, cal: CalibrationConstants, seed: int = 0,
                   max_attempts: int = MAX_ATTEMPTS, pump_retention: float = 0.0,
                   record_counters: bool = False) -> ControllerOutcome:
    """Emulate one initialization loop, optionally recording the SPAD counter.

    The counter trace holds the 6-bit SPAD register at the end of every probe
    (at the threshold event or at window end).
    """
    rates = rates_at_power(cal, cfg.probe_power)
    trace = [] if record_counters else None
    a, e, s, i, _ = _run_block(cfg, rates, block_rng(seed, 0), 1, max_attempts, pump_retention, trace)
    to_state = lambda flag: ChargeState.NEGATIVE if flag else ChargeState.NEUTRAL  # noqa: E731
    return ControllerOutcome(
        attempts=int(a[0]),
        elapsed=float(e[0]),
        success_state=to_state(s[0]),
        trial_counter=int(a[0]) % COUNTER_MODULUS,
        counter_trace=tuple(trace) if trace is not None else None,
        initial_state=to_state(i[0]),
    )


@dataclass(frozen=True)
class ProtocolStats:
    fidelity: float
    fidelity_err: float
    avg_attempts: float
    avg_attempts_err: float
    mean_elapsed: float
    mean_elapsed_err: float
    runs: int
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(batch: ControllerBatch) -> ProtocolStats:
    n = batch.runs
    f = float(batch.success_negative.mean())
    a = batch.attempts.astype(float)
    if n < 2:
        return ProtocolStats(f, math.inf, float(a.mean()), math.inf,
                             float(batch.elapsed.mean()), math.inf, n, True)
    f_err = math.sqrt(max(f * (1 - f), 0.0) / n)
    return ProtocolStats(
        fidelity=f,
        fidelity_err=f_err,
        avg_attempts=float(a.mean()),
        avg_attempts_err=float(a.std(ddof=1) / math.sqrt(n)),
        mean_elapsed=float(batch.elapsed.mean()),
        mean_elapsed_err=float(batch.elapsed.std(ddof=1) / math.sqrt(n)),
        runs=n,
        degenerate=False,
    )


def estimate_protocol_stats(cfg: ProtocolConfig, cal: CalibrationConstants, shots: int, seed: int = 0,
                            **kwargs) -> ProtocolStats:
    """Point estimates and standard errors from ``shots`` emulated loops.

    With a single shot the estimate is flagged ``degenerate`` and its errors
    are infinite.
    """
    return summarize(run_controller_batch(cfg, cal, shots, seed, **kwargs))
