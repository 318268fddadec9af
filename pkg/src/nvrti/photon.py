"""Photon-count distributions for a charge readout window.

Starting from NV-, the counts detected in a window of length ``t_r`` depend on
how much of the window the defect spends in NV- before switching.  Splitting
trajectories by the parity of the number of charge transitions gives two
integrals over the time ``tau`` spent in NV-:

* odd:  ``exp((G_rec - G_ion) tau - G_rec t_r) G_ion I0(x) Pois(n; mu(tau))``
* even: ``exp((G_rec - G_ion) tau - G_rec t_r) sqrt(G_ion G_rec tau/(t_r - tau)) I1(x) Pois(n; mu(tau))``
  plus the no-transition term ``exp(-G_ion t_r) Pois(n; gamma_minus t_r)``

with ``x = 2 sqrt(G_ion G_rec tau (t_r - tau))`` and
``mu(tau) = gamma_minus tau + gamma_zero (t_r - tau)``.  These are joint
densities of (parity, occupation time), so the two branches add up to the full
distribution.  The NV0 case follows by exchanging the roles of the two states.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, pdtrc, xlogy

from .bessel import bessel_i, bessel_i1_ratio
from .charge import RateSet
from .errors import DomainError, NumericalError

QUAD_RTOL = 1e-9
MAX_PANELS = 2**20
TAIL_BOUND = 1e-12
NMAX_PAD = 10


class ChargeState(enum.Enum):
    NEGATIVE = "negative"
    NEUTRAL = "neutral"

    @property
    def other(self) -> "ChargeState":
        return ChargeState.NEUTRAL if self is ChargeState.NEGATIVE else ChargeState.NEGATIVE

    @classmethod
    def parse(cls, value) -> "ChargeState":
        if isinstance(value, cls):
            return value
        aliases = {"-": "negative", "nv-": "negative", "0": "neutral", "nv0": "neutral"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


def log_poisson_pmf(mean, n):
    """``n ln(mean) - mean - lgamma(n + 1)``, with ``mean = 0`` handled exactly."""
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0):
        raise DomainError("Poisson mean must be >= 0")
    n = np.asarray(n)
    if np.any(n < 0):
        raise DomainError("photon count must be >= 0")
    out = xlogy(n, mean) - mean - gammaln(n + 1.0)
    return float(out) if out.ndim == 0 else out


def count_cutoff(rates: RateSet, t_r: float) -> int:
    """Largest photon count kept in a distribution.

    Smallest ``n`` whose Poisson tail beyond ``n`` is below ``TAIL_BOUND`` at the
    brighter state's mean, plus ``NMAX_PAD``.  The brighter mean bounds the
    count in either state stochastically, so the truncation error of any of
    our distributions is below ``TAIL_BOUND``.
    """
    mean = max(rates.gamma_minus, rates.gamma_zero) * t_r
    if mean == 0:
        return NMAX_PAD
    hi = int(mean + 12 * math.sqrt(mean) + 40)
    ks = np.arange(hi + 1)
    below = np.nonzero(pdtrc(ks, mean) < TAIL_BOUND)[0]
    n = int(below[0]) if below.size else hi
    return n + NMAX_PAD


def _integrands(rates: RateSet, t_r: float, tau: np.ndarray, log_fact: np.ndarray, ns: np.ndarray):
    gm, g0, gi, gr = rates.as_tuple()
    span = np.clip(t_r - tau, 0.0, None)
    x = 2.0 * np.sqrt(gi * gr * tau * span)
    weight = np.exp((gr - gi) * tau - gr * t_r)
    odd_kernel = gi * bessel_i(0, x) * weight
    # sqrt(ab tau/(t-tau)) I1(x) == ab tau * I1(x)/(x/2); finite at tau = t_r
    even_kernel = gi * gr * tau * bessel_i1_ratio(x) * weight
    mean = gm * tau + g0 * span
    logp = xlogy(ns[:, None], mean[None, :]) - mean[None, :] - log_fact[:, None]
    p = np.exp(logp)
    return p * odd_kernel, p * even_kernel


def _simpson_branches(rates: RateSet, t_r: float, n_max: int, rtol: float = QUAD_RTOL):
    """Composite Simpson with interval doubling; returns (odd, even-integral)."""
    ns = np.arange(n_max + 1, dtype=float)
    log_fact = gammaln(ns + 1.0)
    if rates.gamma_ion == 0 and rates.gamma_rec == 0:
        z = np.zeros(n_max + 1)
        return z, z.copy()
    if rates.gamma_ion == 0:
        # odd kernel and even kernel both carry a factor G_ion
        z = np.zeros(n_max + 1)
        return z, z.copy()

    panels = 16
    tau = np.linspace(0.0, t_r, panels + 1)
    fo, fe = _integrands(rates, t_r, tau, log_fact, ns)
    end = np.stack([fo[:, 0] + fo[:, -1], fe[:, 0] + fe[:, -1]])
    mid = np.stack([fo[:, 1:-1:2].sum(axis=1), fe[:, 1:-1:2].sum(axis=1)])
    inner = np.stack([fo[:, 2:-1:2].sum(axis=1), fe[:, 2:-1:2].sum(axis=1)])
    prev = t_r / panels / 3.0 * (end + 4 * mid + 2 * inner)
    change = np.inf
    while True:
        if panels * 2 > MAX_PANELS:
            raise NumericalError(
                f"quadrature did not converge within {MAX_PANELS} panels "
                f"(relative change {change:.3g})",
                achieved=change,
            )
        panels *= 2
        h = t_r / panels
        new_tau = h * (2 * np.arange(panels // 2) + 1)
        fo, fe = _integrands(rates, t_r, new_tau, log_fact, ns)
        inner = inner + mid
        mid = np.stack([fo.sum(axis=1), fe.sum(axis=1)])
        cur = h / 3.0 * (end + 4 * mid + 2 * inner)
        scale = np.abs(cur).sum()
        change = np.abs(cur - prev).sum() / scale if scale > 0 else 0.0
        prev = cur
        if change < rtol:
            return cur[0], cur[1]


@lru_cache(maxsize=8192)
def _negative_start_branches(rates: RateSet, t_r: float, n_max: int):
    odd, even_integral = _simpson_branches(rates, t_r, n_max)
    ns = np.arange(n_max + 1)
    stay = np.exp(-rates.gamma_ion * t_r + log_poisson_pmf(rates.gamma_minus * t_r, ns))
    even = even_integral + stay
    odd.setflags(write=False)
    even.setflags(write=False)
    return odd, even


@dataclass(frozen=True, eq=False)
class PhotonDistribution:
    """Probability mass over photon counts ``0..n_max`` for one readout window.

    ``initial`` is a :class:`ChargeState` for a conditional distribution or the
    NV- fraction for a mixture.
    """

    pmf: np.ndarray
    rates: RateSet
    t_r: float
    initial: object

    @property
    def n_max(self) -> int:
        return len(self.pmf) - 1

    @property
    def deficit(self) -> float:
        """Probability mass lost to truncation and quadrature error."""
        return 1.0 - float(self.pmf.sum())

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))

    def tail(self, nu: int) -> float:
        return tail_probability(self, nu)

    def rows(self):
        return [(int(n), float(p)) for n, p in enumerate(self.pmf)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "probability"])
            for n, p in self.rows():
                w.writerow([n, repr(p)])


def _validate(rates: RateSet, t_r: float):
    if not isinstance(rates, RateSet):
        raise DomainError("rates must be a RateSet")
    if not t_r > 0:
        raise DomainError(f"readout duration must be > 0, got {t_r}")


def conditional_branches(rates: RateSet, t_r: float, initial=ChargeState.NEGATIVE, n_max=None):
    """Return the odd- and even-parity pieces of ``p(n | initial)``.

    The even piece includes the no-transition term.  Their sum is the full
    conditional distribution.
    """
    _validate(rates, t_r)
    initial = ChargeState.parse(initial)
    if n_max is None:
        n_max = count_cutoff(rates, t_r)
    r = rates if initial is ChargeState.NEGATIVE else rates.swapped()
    return _negative_start_branches(r, float(t_r), int(n_max))


def distribution_conditional(rates: RateSet, t_r: float, initial=ChargeState.NEGATIVE, n_max=None) -> PhotonDistribution:
    """Photon distribution for a window of ``t_r`` seconds started in ``initial``."""
    odd, even = conditional_branches(rates, t_r, initial, n_max)
    pmf = np.clip(odd + even, 0.0, 1.0)
    pmf.setflags(write=False)
    return PhotonDistribution(pmf, rates, float(t_r), ChargeState.parse(initial))


def distribution_mixture(rates: RateSet, t_r: float, p_minus: float, n_max=None) -> PhotonDistribution:
    """``p_minus * p(n|-) + (1 - p_minus) * p(n|0)``."""
    if not 0 <= p_minus <= 1:
        raise DomainError(f"p_minus must lie in [0, 1], got {p_minus}")
    _validate(rates, t_r)
    if n_max is None:
        n_max = count_cutoff(rates, t_r)
    neg = distribution_conditional(rates, t_r, ChargeState.NEGATIVE, n_max).pmf
    neu = distribution_conditional(rates, t_r, ChargeState.NEUTRAL, n_max).pmf
    pmf = p_minus * neg + (1.0 - p_minus) * neu
    pmf.setflags(write=False)
    return PhotonDistribution(pmf, rates, float(t_r), float(p_minus))


def tail_probability(dist, nu: int) -> float:
    """``P(n >= nu)``, clamped to [0, 1].  Accepts a distribution or a pmf array."""
    if nu < 0 or int(nu) != nu:
        raise DomainError(f"threshold must be a non-negative integer, got {nu}")
    pmf = dist.pmf if isinstance(dist, PhotonDistribution) else np.asarray(dist)
    if nu == 0:
        return 1.0
    return float(min(1.0, max(0.0, pmf[int(nu):].sum())))


def tail_array(pmf: np.ndarray) -> np.ndarray:
    """Vector of ``P(n >= nu)`` for ``nu = 0 .. len(pmf)``."""
    t = np.concatenate([np.cumsum(pmf[::-1])[::-1], [0.0]])
    t[0] = 1.0
    return np.clip(t, 0.0, 1.0)


def optimal_charge_threshold(dist_minus, dist_zero, prior: float = 0.5):
    """Threshold maximizing the assignment fidelity between NV- and NV0.

    The fidelity at threshold ``nu`` is
    ``prior * P(n >= nu | -) + (1 - prior) * P(n < nu | 0)``; for the default
    prior this is the mean of the two correct-assignment probabilities.  Ties
    go to the smaller threshold.

    Returns
    -------
    (nu, fidelity)
    """
    if not 0 <= prior <= 1:
        raise DomainError("prior must lie in [0, 1]")
    pm = dist_minus.pmf if isinstance(dist_minus, PhotonDistribution) else np.asarray(dist_minus)
    p0 = dist_zero.pmf if isinstance(dist_zero, PhotonDistribution) else np.asarray(dist_zero)
    size = max(len(pm), len(p0))
    pm = np.pad(pm, (0, size - len(pm)))
    p0 = np.pad(p0, (0, size - len(p0)))
    tm = tail_array(pm)
    t0 = tail_array(p0)
    fid = prior * tm + (1.0 - prior) * (1.0 - t0)
    best = fid.max()
    nu = int(np.nonzero(fid >= best - 1e-12)[0][0])
    return nu, float(fid[nu])
