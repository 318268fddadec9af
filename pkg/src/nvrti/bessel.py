r"""Modified Bessel functions of the first kind, orders 0 and 1.

Arguments up to ``SERIES_LIMIT`` use the ascending series

.. math:: I_\nu(x) = \sum_k \frac{(x/2)^{2k+\nu}}{k!\,(k+\nu)!}

which has only positive terms, so it is summed until the term ratio drops
below 1e-16.  Above the limit the Hankel asymptotic expansion

.. math:: I_\nu(x) \sim \frac{e^x}{\sqrt{2\pi x}}
          \sum_k (-1)^k \frac{a_k(\nu)}{x^k}

is truncated at its smallest term, which is far below double precision for
``x > 30``.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

SERIES_LIMIT = 30.0
_EPS = 1e-16
_MAX_TERMS = 1000


def _series(order: int, x: np.ndarray) -> np.ndarray:
    q = 0.25 * x * x
    term = np.ones_like(x) if order == 0 else 0.5 * x
    total = term.copy()
    for k in range(_MAX_TERMS):
        term = term * q / ((k + 1) * (k + 1 + order))
        total += term
        if np.all(term <= _EPS * total):
            break
    return total


def _asymptotic(order: int, x: np.ndarray) -> np.ndarray:
    mu = 4.0 * order * order
    term = np.ones_like(x)
    total = term.copy()
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 200):
        new = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        # the series diverges: freeze each element at its smallest term
        active &= np.abs(new) < np.abs(term)
        total = np.where(active, total + new, total)
        term = new
        if not active.any() or np.all(np.abs(new) <= _EPS * np.abs(total)):
            break
    with np.errstate(over="ignore"):
        return np.exp(x) / np.sqrt(2 * np.pi * x) * total


def bessel_i(order: int, x):
    """Modified Bessel function of the first kind for order 0 or 1.

    Parameters
    ----------
    order : {0, 1}
    x : float or array_like, all values >= 0

    Returns
    -------
    float or ndarray matching the shape of ``x``.
    """
    if order not in (0, 1):
        raise DomainError(f"only orders 0 and 1 are supported, got {order!r}")
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("x must be >= 0")
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    small = flat <= SERIES_LIMIT
    if small.any():
        out[small] = _series(order, flat[small])
    if (~small).any():
        out[~small] = _asymptotic(order, flat[~small])
    out = out.reshape(arr.shape)
    return float(out) if np.ndim(x) == 0 else out


def bessel_i1_ratio(x):
    """Return ``I1(x) / (x/2)``, which tends to 1 as ``x -> 0``.

    Used where ``I1`` multiplies a factor that diverges like ``1/x``; the ratio
    form has no 0/0 at the origin.
    """
    arr = np.asarray(x, dtype=float)
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    small = flat <= SERIES_LIMIT
    if small.any():
        xs = flat[small]
        q = 0.25 * xs * xs
        term = np.ones_like(xs)
        total = term.copy()
        for k in range(_MAX_TERMS):
            term = term * q / ((k + 1) * (k + 2))
            total += term
            if np.all(term <= _EPS * total):
                break
        out[small] = total
    if (~small).any():
        xl = flat[~small]
        out[~small] = _asymptotic(1, xl) / (0.5 * xl)
    out = out.reshape(arr.shape)
    return float(out) if np.ndim(x) == 0 else out
