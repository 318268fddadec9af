"""Independent reference computations used only by the tests."""

import numpy as np
from scipy.linalg import expm


def markov_count_pmf(rates, t_r, p_minus, n_max):
    """Photon-count pmf from the matrix exponential of the joint generator.

    States are (count n, charge s) with n = 0..n_max and an absorbing
    overflow bucket at n_max + 1.  Independent of any Bessel-function or
    quadrature machinery.
    """
    gm, g0, gi, gr = rates.as_tuple()
    m = n_max + 2
    dim = 2 * m
    Q = np.zeros((dim, dim))

    def idx(n, s):
        return 2 * n + s  # s = 0 -> NV-, 1 -> NV0

    for n in range(m):
        for s, emit, leave in ((0, gm, gi), (1, g0, gr)):
            i = idx(n, s)
            Q[i, idx(n, 1 - s)] += leave
            Q[i, i] -= leave
            if n < m - 1:
                Q[i, idx(n + 1, s)] += emit
                Q[i, i] -= emit
    start = np.zeros(dim)
    start[idx(0, 0)] = p_minus
    start[idx(0, 1)] = 1.0 - p_minus
    final = start @ expm(Q * t_r)
    return final[0::2][: n_max + 1] + final[1::2][: n_max + 1]


def poisson_pmf(mean, n_max):
    from scipy.stats import poisson

    return poisson.pmf(np.arange(n_max + 1), mean)
