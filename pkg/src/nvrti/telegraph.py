"""Monte Carlo simulation of the two-state charge telegraph process.

Dwell times in NV- (NV0) are exponential with rate ``gamma_ion``
(``gamma_rec``); within a dwell the detector sees a Poisson number of photons
with mean ``rate * dwell``.  This is an independent check on the closed-form
distributions in :mod:`nvrti.photon` and the engine behind the controller
emulator.

Randomness: every stream comes from ``numpy.random.PCG64`` seeded through
``SeedSequence((seed, block))``.  Batched routines split their shots into fixed
blocks of ``BLOCK`` shots, each with its own stream, so results do not depend on
evaluation order and blocks may be computed in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .charge import RateSet
from .errors import DomainError
from .photon import ChargeState, PhotonDistribution

BLOCK = 8192


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), int(block)))))


@dataclass(frozen=True)
class TrajectoryRecord:
    segments: tuple  # ((ChargeState, dwell seconds), ...)
    counts: tuple  # photons per segment
    seed: int
    timestamps: tuple | None = None

    @property
    def duration(self) -> float:
        return float(sum(d for _, d in self.segments))

    @property
    def total_counts(self) -> int:
        return int(sum(self.counts))

    @property
    def n_transitions(self) -> int:
        return len(self.segments) - 1

    def occupancy(self, state=ChargeState.NEGATIVE) -> float:
        state = ChargeState.parse(state)
        return sum(d for s, d in self.segments if s is state) / self.duration


def _exit_rate(rates: RateSet, state: ChargeState) -> float:
    return rates.gamma_ion if state is ChargeState.NEGATIVE else rates.gamma_rec


def _emission_rate(rates: RateSet, state: ChargeState) -> float:
    return rates.gamma_minus if state is ChargeState.NEGATIVE else rates.gamma_zero


def simulate_trajectory(rates: RateSet, duration: float, initial=ChargeState.NEGATIVE, seed: int = 0,
                        timestamps: bool = False) -> TrajectoryRecord:
    """Simulate one charge trajectory with photon emission.

    With ``timestamps=True`` the photon arrival times are returned as well;
    within a segment they are uniform order statistics, as for any Poisson
    process conditioned on its count.
    """
    if not duration > 0:
        raise DomainError("duration must be > 0")
    rng = block_rng(seed, 0)
    state = ChargeState.parse(initial)
    t = 0.0
    segments, counts, stamps = [], [], []
    while t < duration:
        rate = _exit_rate(rates, state)
        dwell = rng.exponential(1.0 / rate) if rate > 0 else np.inf
        last = t + dwell >= duration
        if last:
            dwell = duration - t
        k = int(rng.poisson(_emission_rate(rates, state) * dwell))
        segments.append((state, float(dwell)))
        counts.append(k)
        if timestamps:
            stamps.extend(np.sort(t + dwell * rng.random(k)).tolist())
        if last:
            break
        t += dwell
        state = state.other
    return TrajectoryRecord(tuple(segments), tuple(counts), int(seed),
                            tuple(stamps) if timestamps else None)


def _safe_exponential(rng, rate: np.ndarray) -> np.ndarray:
    e = rng.standard_exponential(rate.shape)
    with np.errstate(divide="ignore"):
        return np.where(rate > 0, e / np.where(rate > 0, rate, 1.0), np.inf)


def sample_window_counts(rng, rates: RateSet, t_r: float, negative: np.ndarray):
    """Vectorized photon counts over a window for many starting states.

    Parameters
    ----------
    negative : bool array, True where the trajectory starts in NV-.

    Returns
    -------
    counts : int array
    final_negative : bool array, charge state at the end of the window
    """
    negative = np.asarray(negative, dtype=bool).copy()
    size = negative.shape[0]
    counts = np.zeros(size, dtype=np.int64)
    elapsed = np.zeros(size)
    idx = np.arange(size)
    while idx.size:
        neg = negative[idx]
        exit_rate = np.where(neg, rates.gamma_ion, rates.gamma_rec)
        dwell = _safe_exponential(rng, exit_rate)
        remaining = t_r - elapsed[idx]
        done = dwell >= remaining
        dwell = np.minimum(dwell, remaining)
        emit = np.where(neg, rates.gamma_minus, rates.gamma_zero)
        counts[idx] += rng.poisson(emit * dwell)
        elapsed[idx] += dwell
        cont = idx[~done]
        negative[cont] = ~negative[cont]
        idx = cont
    return counts, negative


def sample_threshold_crossing(rng, rates: RateSet, t_probe: float, negative: np.ndarray, nu: int):
    """Run a probe window on many trajectories and find the ``nu``-th photon.

    Returns
    -------
    triggered : bool array
    trigger_time : float array (``t_probe`` where not triggered)
    negative_at_end : bool array, state at the trigger (or at window end)
    counts : int array, photons counted up to the trigger or window end
    """
    negative = np.asarray(negative, dtype=bool).copy()
    size = negative.shape[0]
    counts = np.zeros(size, dtype=np.int64)
    elapsed = np.zeros(size)
    triggered = np.zeros(size, dtype=bool)
    when = np.full(size, float(t_probe))
    idx = np.arange(size)
    while idx.size:
        neg = negative[idx]
        dwell = _safe_exponential(rng, np.where(neg, rates.gamma_ion, rates.gamma_rec))
        remaining = t_probe - elapsed[idx]
        done = dwell >= remaining
        dwell = np.minimum(dwell, remaining)
        k = rng.poisson(np.where(neg, rates.gamma_minus, rates.gamma_zero) * dwell)
        need = nu - counts[idx]
        hit = k >= need
        if hit.any():
            h = idx[hit]
            m = need[hit]
            # m-th of k uniform arrivals in the segment
            frac = rng.beta(m, k[hit] - m + 1)
            when[h] = elapsed[h] + frac * dwell[hit]
            triggered[h] = True
            counts[h] = nu
        miss = ~hit
        counts[idx[miss]] += k[miss]
        elapsed[idx[miss]] += dwell[miss]
        cont = idx[miss & ~done]
        negative[cont] = ~negative[cont]
        idx = cont
    return triggered, when, negative, counts


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    counts: np.ndarray
    shots: int
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def pmf(self) -> np.ndarray:
        return self.counts / self.shots

    @property
    def n_max(self) -> int:
        return len(self.counts) - 1

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "count"])
            for n, c in enumerate(self.counts):
                w.writerow([n, int(c)])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalDistribution":
        from .fitting import read_histogram_csv

        counts = read_histogram_csv(path)
        return cls(counts, int(counts.sum()))


def empirical_distribution(rates: RateSet, t_r: float, initial, shots: int, seed: int = 0) -> EmpiricalDistribution:
    """Histogram of photon counts from ``shots`` independent windows.

    ``initial`` is a :class:`ChargeState` or an NV- fraction; with a fraction
    each shot draws its starting state independently.
    """
    if shots < 1:
        raise DomainError("shots must be >= 1")
    if not t_r > 0:
        raise DomainError("t_r must be > 0")
    fraction = None
    if isinstance(initial, (int, float)) and not isinstance(initial, bool):
        fraction = float(initial)
        if not 0 <= fraction <= 1:
            raise DomainError("NV- fraction must lie in [0, 1]")
    else:
        initial = ChargeState.parse(initial)
    parts = []
    for block, start in enumerate(range(0, shots, BLOCK)):
        size = min(BLOCK, shots - start)
        rng = block_rng(seed, block)
        if fraction is None:
            neg = np.full(size, initial is ChargeState.NEGATIVE)
        else:
            neg = rng.random(size) < fraction
        counts, _ = sample_window_counts(rng, rates, t_r, neg)
        parts.append(counts)
    allc = np.concatenate(parts)
    hist = np.bincount(allc)
    return EmpiricalDistribution(hist, shots, seed, {"t_r": t_r, "initial": str(initial if fraction is None else fraction)})


def _as_pmf(d) -> np.ndarray:
    if isinstance(d, (PhotonDistribution, EmpiricalDistribution)):
        return np.asarray(d.pmf, dtype=float)
    return np.asarray(d, dtype=float)


def total_variation_distance(a, b) -> float:
    """Half the L1 distance between two count distributions."""
    pa, pb = _as_pmf(a), _as_pmf(b)
    size = max(len(pa), len(pb))
    pa = np.pad(pa, (0, size - len(pa)))
    pb = np.pad(pb, (0, size - len(pb)))
    return float(min(1.0, 0.5 * np.abs(pa - pb).sum()))
