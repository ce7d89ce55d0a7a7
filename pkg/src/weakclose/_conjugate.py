"""Batched discrete Legendre-Fenchel conjugate (lower hull + pointer walk)."""

import numpy as np
from numba import njit


@njit(cache=True)
def _conj_row(x, f, s, out, arg, hull):
    n = x.shape[0]
    # Andrew's monotone chain, lower part; x is strictly increasing
    m = 0
    for j in range(n):
        while m >= 2:
            a = hull[m - 2]
            b = hull[m - 1]
            # drop b if it lies on or above segment a -> j
            if (f[b] - f[a]) * (x[j] - x[a]) >= (f[j] - f[a]) * (x[b] - x[a]):
                m -= 1
            else:
                break
        hull[m] = j
        m += 1
    k = 0
    for i in range(s.shape[0]):
        si = s[i]
        while k < m - 1:
            a = hull[k]
            b = hull[k + 1]
            if (f[b] - f[a]) <= si * (x[b] - x[a]):
                k += 1
            else:
                break
        j = hull[k]
        out[i] = si * x[j] - f[j]
        arg[i] = j


@njit(cache=True)
def conj_rows(x, F, s):
    """``out[r, i] = max_j (s[i] x[j] - F[r, j])`` and the maximizing ``j``.

    ``x`` and ``s`` must be strictly increasing.
    """
    rows = F.shape[0]
    out = np.empty((rows, s.shape[0]))
    arg = np.empty((rows, s.shape[0]), dtype=np.int64)
    hull = np.empty(x.shape[0], dtype=np.int64)
    for r in range(rows):
        _conj_row(x, F[r], s, out[r], arg[r], hull)
    return out, arg
