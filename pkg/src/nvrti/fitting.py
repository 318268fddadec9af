"""Maximum-likelihood fits of charge-readout histograms and least-squares curve fits.

Histogram fits maximize the multinomial log-likelihood
``sum_n counts[n] * log p(n; theta)`` of the charge mixture model over any
subset of ``(gamma_minus, gamma_zero, gamma_ion, gamma_rec, p_minus)``.  The
search is a Nelder-Mead simplex in transformed coordinates (log for rates,
logit for populations) so the bounds hold automatically, with randomized
restarts.  Standard errors come from a finite-difference observed information
matrix.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares, minimize

from .charge import RateSet
from .errors import DomainError
from .photon import count_cutoff, distribution_mixture
from .spin import (LifetimeModel, convolve_with_irf, hahn, lifetime_response, ramsey,
                   relaxation)

RATE_PARAMS = ("gamma_minus", "gamma_zero", "gamma_ion", "gamma_rec")
CHARGE_PARAMS = RATE_PARAMS + ("p_minus",)
MIN_SHOTS = 100
RESTARTS = 3
XATOL = 1e-8
FRTOL = 1e-10
BOUNDARY_Z = 18.0  # |log| or |logit| excursion treated as pinned to a bound


def read_histogram_csv(path) -> np.ndarray:
    """Read an ``n,count`` CSV into a dense count vector; absent ``n`` are zero."""
    rows = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        raise DomainError(f"{path}: empty histogram file")
    if [h.strip() for h in header[:2]] != ["n", "count"]:
        raise DomainError(f"{path}: expected header 'n,count', got {','.join(header)!r}")
    for lineno, row in enumerate(reader, start=2):
        try:
            n, c = int(row[0]), int(row[1])
        except (ValueError, IndexError):
            raise DomainError(f"{path}:{lineno}: malformed row {row!r}") from None
        if n < 0 or c < 0:
            raise DomainError(f"{path}:{lineno}: negative value in row {row!r}")
        if n in rows:
            raise DomainError(f"{path}:{lineno}: duplicate n={n}")
        rows[n] = c
    if not rows:
        raise DomainError(f"{path}: histogram has no rows")
    counts = np.zeros(max(rows) + 1, dtype=np.int64)
    for n, c in rows.items():
        counts[n] = c
    return counts


@dataclass(frozen=True, eq=False)
class HistogramDataset:
    counts: np.ndarray
    t_r: float
    power: float | None = None
    label: str = ""

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or np.any(c < 0):
            raise DomainError("counts must be a 1-D array of non-negative integers")
        if not self.t_r > 0:
            raise DomainError("t_r must be > 0")

    @property
    def shots(self) -> int:
        return int(np.sum(self.counts))

    @classmethod
    def from_csv(cls, path, t_r, power=None, label=None) -> "HistogramDataset":
        return cls(read_histogram_csv(path), t_r, power, label if label is not None else Path(path).stem)

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "count"])
            for n, c in enumerate(self.counts):
                w.writerow([n, int(c)])


@dataclass
class FitResult:
    parameters: dict
    standard_errors: dict
    objective: float
    converged: bool
    iterations: int
    evaluations: int = 0
    free: tuple = ()
    history: list = field(default_factory=list, repr=False)
    diagnostics: list = field(default_factory=list)
    at_boundary: list = field(default_factory=list)
    covariance: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("history")
        cov = d.pop("covariance")
        d["free"] = list(self.free)
        d["covariance"] = None if cov is None else np.asarray(cov).tolist()
        return d


# --- parameter transforms ----------------------------------------------------


def _is_fraction(name: str) -> bool:
    return name.startswith("p_minus") or name in ("p0", "f_pi")


def _to_z(name, value):
    if _is_fraction(name):
        v = min(max(value, 1e-12), 1 - 1e-12)
        return math.log(v / (1 - v))
    return math.log(max(value, 1e-300))


def _from_z(name, z):
    if _is_fraction(name):
        return 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
    return math.exp(min(z, 700.0))


def _simplex_search(fun, z0, rng, restarts=RESTARTS):
    """Nelder-Mead with randomized restarts; returns (best OptimizeResult, history, runs)."""
    dim = len(z0)
    f0 = fun(z0)
    fatol = FRTOL * max(1.0, abs(f0)) if np.isfinite(f0) else 1e-6
    opts = dict(xatol=XATOL, fatol=fatol, maxfev=4000 * dim, maxiter=4000 * dim,
                adaptive=dim > 2)
    best, best_hist, runs = None, [], []
    starts = [np.asarray(z0, float)] + [np.asarray(z0, float) + rng.normal(0, 0.3, dim)
                                        for _ in range(restarts)]
    for start in starts:
        hist = []
        simplex = np.vstack([start] + [start + 0.25 * e for e in np.eye(dim)])
        res = minimize(fun, start, method="Nelder-Mead",
                       callback=lambda intermediate_result: hist.append(float(intermediate_result.fun)),
                       options=dict(opts, initial_simplex=simplex))
        runs.append(res)
        if best is None or res.fun < best.fun:
            best, best_hist = res, hist
    # polish from the best point so the final simplex is small around it
    hist = []
    simplex = np.vstack([best.x] + [best.x + 0.02 * e for e in np.eye(dim)])
    res = minimize(fun, best.x, method="Nelder-Mead",
                   callback=lambda intermediate_result: hist.append(float(intermediate_result.fun)),
                   options=dict(opts, initial_simplex=simplex))
    runs.append(res)
    if res.fun <= best.fun:
        best, best_hist = res, best_hist + hist
    return best, best_hist, runs


def _dataset_nll(ds: HistogramDataset, rates: RateSet, p_minus: float) -> float:
    counts = np.asarray(ds.counts, dtype=float)
    n_max = max(count_cutoff(rates, ds.t_r), len(counts) - 1)
    pmf = distribution_mixture(rates, ds.t_r, p_minus, n_max).pmf[: len(counts)]
    mask = counts > 0
    return float(-np.sum(counts[mask] * np.log(np.clip(pmf[mask], 1e-300, None))))


class _JointModel:
    """Parameter bookkeeping shared by single and joint histogram fits."""

    def __init__(self, datasets, init, free, tie_recombination):
        self.datasets = list(datasets)
        k = len(self.datasets)
        self.tie = tie_recombination
        values = {}
        for name in RATE_PARAMS:
            if name == "gamma_rec" and tie_recombination is not None:
                continue
            values[name] = float(init[name])
        pm = init.get("p_minus", 0.75)
        pm = list(pm) if np.ndim(pm) else [pm] * k
        if len(pm) != k:
            raise DomainError("need one initial p_minus per dataset")
        for i, v in enumerate(pm):
            values[self.pname(i)] = float(v)
        for name, v in values.items():
            if _is_fraction(name) and not 0 <= v <= 1:
                raise DomainError(f"initial {name} must lie in [0, 1]")
            if not _is_fraction(name) and v < 0:
                raise DomainError(f"initial {name} must be >= 0")
        self.values = values
        self.free = tuple(n for n in values if n in free)
        if not self.free:
            raise DomainError("no free parameters")

    def pname(self, i):
        return "p_minus" if len(self.datasets) == 1 else f"p_minus[{i}]"

    def full(self, params: dict) -> dict:
        p = dict(self.values)
        p.update(params)
        if self.tie is not None:
            p["gamma_rec"] = self.tie / (1.0 - self.tie) * p["gamma_ion"]
        return p

    def nll(self, params: dict) -> float:
        p = self.full(params)
        try:
            rates = RateSet(*(p[n] for n in RATE_PARAMS))
        except DomainError:
            return math.inf
        return sum(_dataset_nll(ds, rates, p[self.pname(i)]) for i, ds in enumerate(self.datasets))

    def from_z(self, z):
        return {n: _from_z(n, v) for n, v in zip(self.free, z)}

    def z0(self):
        return np.array([_to_z(n, self.values[n]) for n in self.free])


def _run_fit(model: _JointModel, seed: int, restarts: int) -> FitResult:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 11))))
    diagnostics = []
    for i, ds in enumerate(model.datasets):
        if ds.shots < MIN_SHOTS:
            msg = f"dataset {i} has only {ds.shots} shots (< {MIN_SHOTS}); estimates are unreliable"
            warnings.warn(msg, stacklevel=3)
            diagnostics.append(msg)
        if np.count_nonzero(ds.counts) < 2:
            diagnostics.append(f"dataset {i} occupies a single bin; parameters are not identifiable")

    def fun(z):
        v = model.nll(model.from_z(z))
        return v if np.isfinite(v) else 1e300

    best, hist, runs = _simplex_search(fun, model.z0(), rng, restarts)
    params_free = model.from_z(best.x)
    # fractions pinned near 0 or 1; rates collapsed by many e-folds from their start
    boundary = [n for n, z, s in zip(model.free, best.x, model.z0())
                if (abs(z) > BOUNDARY_Z if _is_fraction(n) else z < s - BOUNDARY_Z)]
    spread = max(r.fun for r in runs) - best.fun
    if spread > 1.0:
        diagnostics.append(f"restarts disagree by {spread:.3g} in negative log-likelihood")
    converged = bool(best.success) and not boundary
    if not best.success:
        diagnostics.append(f"simplex search did not converge: {best.message}")
    for n in boundary:
        diagnostics.append(f"parameter {n} is pinned at a bound; its error is omitted")
    full = model.full(params_free)
    result = FitResult(
        parameters=full,
        standard_errors={},
        objective=float(best.fun),
        converged=converged,
        iterations=int(sum(r.nit for r in runs)),
        evaluations=int(sum(r.nfev for r in runs)),
        free=model.free,
        history=hist,
        diagnostics=diagnostics,
        at_boundary=boundary,
    )
    if converged or boundary:
        fisher_uncertainties(result, lambda p: model.nll(p))
    return result


def fit_charge_histogram(data: HistogramDataset, free=("p_minus",), init: dict | None = None,
                         seed: int = 0, restarts: int = RESTARTS,
                         tie_recombination: float | None = None) -> FitResult:
    """Fit one histogram to the two-state mixture model.

    Parameters
    ----------
    free : names from ``CHARGE_PARAMS`` to fit; the rest stay at ``init``.
    init : starting values for all five parameters (rates in Hz).
    tie_recombination : if given, ``gamma_rec`` is slaved to ``gamma_ion``
        through the steady-state relation with this NV- fraction.
    """
    _check_init(init)
    free = tuple(free)
    unknown = set(free) - set(CHARGE_PARAMS)
    if unknown:
        raise DomainError(f"unknown parameters {sorted(unknown)}")
    model = _JointModel([data], init, free, tie_recombination)
    return _run_fit(model, seed, restarts)


def joint_fit_histograms(datasets, shared=("gamma_minus", "gamma_zero", "gamma_ion"),
                         per_set_free=("p_minus",), init: dict | None = None, seed: int = 0,
                         restarts: int = RESTARTS, tie_recombination: float | None = None) -> FitResult:
    """Fit several histograms with common charge dynamics.

    Rates listed in ``shared`` are fitted once for all datasets; each dataset
    gets its own ``p_minus`` (named ``p_minus[i]``) when ``"p_minus"`` is in
    ``per_set_free``.  ``init["p_minus"]`` may be a scalar or one value per
    dataset.
    """
    datasets = list(datasets)
    if len(datasets) < 1:
        raise DomainError("need at least one dataset")
    _check_init(init)
    unknown = set(shared) - set(RATE_PARAMS)
    if unknown:
        raise DomainError(f"unknown shared parameters {sorted(unknown)}")
    if set(per_set_free) - {"p_minus"}:
        raise DomainError("only p_minus may vary per dataset")
    free = set(shared)
    if "p_minus" in per_set_free:
        free |= {"p_minus"} | {f"p_minus[{i}]" for i in range(len(datasets))}
    model = _JointModel(datasets, init, free, tie_recombination)
    return _run_fit(model, seed, restarts)


def _check_init(init):
    if init is None:
        raise DomainError("initial values are required for all charge parameters")
    missing = set(RATE_PARAMS) - set(init)
    if missing:
        raise DomainError(f"initial values missing for {sorted(missing)}")


# --- uncertainties -----------------------------------------------------------


def _step(name, value):
    if _is_fraction(name):
        return max(1e-7, 1e-3 * min(value, 1.0 - value))
    return max(1e-3 * abs(value), 1e-9)


def fisher_uncertainties(result: FitResult, objective) -> dict:
    """Standard errors from the inverse observed information matrix.

    ``objective`` maps a parameter dict to the negative log-likelihood (or
    half the chi-square).  Parameters pinned at a bound are excluded.  When
    the information matrix is not positive definite no errors are returned
    and a diagnostic is added.  Updates ``result`` in place.
    """
    names = [n for n in result.free if n not in result.at_boundary]
    if not names:
        return {}
    theta = np.array([result.parameters[n] for n in names])
    h = np.array([_step(n, v) for n, v in zip(names, theta)])

    def f(delta):
        p = {n: v for n, v in zip(names, theta + delta)}
        return objective(p)

    k = len(names)
    f0 = f(np.zeros(k))
    H = np.empty((k, k))
    E = np.diag(h)
    fp = [f(E[i]) for i in range(k)]
    fm = [f(-E[i]) for i in range(k)]
    for i in range(k):
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / h[i] ** 2
        for j in range(i):
            v = (f(E[i] + E[j]) - f(E[i] - E[j]) - f(-E[i] + E[j]) + f(-E[i] - E[j])) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        result.diagnostics.append("observed information matrix is not positive definite; errors omitted")
        result.standard_errors = {}
        return {}
    cov = np.linalg.inv(H)
    errs = {n: float(math.sqrt(cov[i, i])) for i, n in enumerate(names)}
    result.standard_errors = errs
    result.covariance = cov
    return errs


# --- curve fits ----------------------------------------------------------------

CURVE_PARAMS = {
    "ramsey": ("offset", "amplitude", "t2star", "detuning", "hyperfine", "phase"),
    "hahn": ("offset", "amplitude", "t2", "stretch"),
    "t1": ("offset", "amplitude", "t1"),
    "lifetime": ("gamma0", "gamma1", "p0", "f_pi", "background", "amp_before", "amp_after"),
}
_POSITIVE = {"t2star", "t2", "stretch", "t1", "gamma0", "gamma1"}


def lifetime_pair(x, params: dict, irf=None):
    """Model for a joint lifetime fit: before and after curves, concatenated."""
    model = LifetimeModel(p0=params["p0"], gamma0_opt=params["gamma0"], gamma1_opt=params["gamma1"],
                          f_pi=params["f_pi"], amplitude_before=params["amp_before"],
                          amplitude_after=params["amp_after"], background=0.0)
    out = []
    for which in ("before", "after"):
        y = lifetime_response(model, which, x)
        if irf is not None:
            y = convolve_with_irf(y, irf)
        out.append(y + params["background"])
    return np.concatenate(out)


def _curve_model(kind, x, p, irf):
    if kind == "ramsey":
        return ramsey(x, p["offset"], p["amplitude"], p["t2star"], p["detuning"], p["hyperfine"], p["phase"])
    if kind == "hahn":
        return hahn(x, p["offset"], p["amplitude"], p["t2"], p["stretch"])
    if kind == "t1":
        return relaxation(x, p["offset"], p["amplitude"], p["t1"])
    return lifetime_pair(x, p, irf)


def fit_curve(kind: str, x, y, sigma=None, init: dict | None = None, free=None, irf=None) -> FitResult:
    """Weighted least-squares fit of a coherence, relaxation or lifetime model.

    For ``kind="lifetime"`` the data ``y`` is the before-pulse curve followed
    by the after-pulse curve, both sampled on ``x``; the two share decay rates,
    polarization, pulse fidelity and background but have separate amplitudes.
    ``irf`` is an optional centred kernel on the same time step as ``x``.
    """
    if kind not in CURVE_PARAMS:
        raise DomainError(f"unknown curve kind {kind!r}; choose from {sorted(CURVE_PARAMS)}")
    names = CURVE_PARAMS[kind]
    if init is None or set(names) - set(init):
        raise DomainError(f"initial values required for {names}")
    if free is None:
        free = tuple(n for n in names if not (kind == "lifetime" and n == "f_pi"))
    free = tuple(n for n in names if n in free)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < len(free) + 2:
        raise DomainError(f"need at least {len(free) + 2} samples for {len(free)} parameters")
    sig = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    if np.any(sig <= 0):
        raise DomainError("sigma must be > 0")
    fixed = {n: float(init[n]) for n in names}
    scale = np.array([abs(fixed[n]) if fixed[n] != 0 else 1.0 for n in free])

    def unpack(u):
        p = dict(fixed)
        p.update({n: float(v) * s for n, v, s in zip(free, u, scale)})
        return p

    def resid(u):
        return (_curve_model(kind, x, unpack(u), irf) - y) / sig

    lo = np.array([0.0 if (n in _POSITIVE or _is_fraction(n)) else -np.inf for n in free])
    hi = np.array([1.0 / s if _is_fraction(n) else np.inf for n, s in zip(free, scale)])
    u0 = np.array([fixed[n] for n in free]) / scale
    u0 = np.clip(u0, lo + 1e-12, hi - 1e-12)
    res = least_squares(resid, u0, bounds=(lo, hi), method="trf", x_scale="jac",
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=20000)
    params = unpack(res.x)
    chi2 = float(np.sum(res.fun**2))
    dof = max(len(y) - len(free), 1)
    diagnostics = []
    errors = {}
    cov = None
    J = res.jac
    try:
        JtJ = J.T @ J
        np.linalg.cholesky(JtJ)
        cov_u = np.linalg.inv(JtJ)
        if sigma is None:
            cov_u = cov_u * chi2 / dof
        cov = cov_u * np.outer(scale, scale)
        errors = {n: float(math.sqrt(cov[i, i])) for i, n in enumerate(free)}
    except np.linalg.LinAlgError:
        diagnostics.append("Jacobian is rank deficient; errors omitted")
    if not res.success:
        diagnostics.append(f"least squares did not converge: {res.message}")
    return FitResult(parameters=params, standard_errors=errors, objective=chi2,
                     converged=bool(res.success), iterations=int(res.nfev), evaluations=int(res.nfev),
                     free=free, diagnostics=diagnostics, covariance=cov)
