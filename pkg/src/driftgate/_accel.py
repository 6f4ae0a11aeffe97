"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``DRIFTGATE_DISABLE_NUMBA=1`` before import to force the numpy path.
Both paths are always importable as ``kernels_numba`` / ``kernels_numpy`` so
tests and benchmarks can compare them directly. The active ``kernels``
namespace mixes the two, taking whichever path is faster per kernel.
"""

import os
from types import SimpleNamespace

import numpy as np
from scipy.spatial.distance import cdist, pdist

try:
    import numba as _nb
except ImportError:  # pragma: no cover
    _nb = None

DISABLED = os.environ.get("DRIFTGATE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
HAVE_NUMBA = _nb is not None


# numpy reference implementations

def _np_pair_sqdists(X):
    return pdist(X, "sqeuclidean")


def _np_rbf_within_mean(X, gamma):
    n = X.shape[0]
    d = pdist(X, "sqeuclidean")
    return 2.0 * np.exp(-gamma * d).sum() / (n * (n - 1))


def _np_rbf_mean_sqd(d, gamma):
    return np.exp(-gamma * d).mean()


def _np_rbf_cross_mean(X, Y, gamma):
    return np.exp(-gamma * cdist(X, Y, "sqeuclidean")).mean()


def _np_logistic_gd(X, y, iters, lr, l2):
    n, p = X.shape
    w = np.zeros(p)
    b = 0.0
    for _ in range(iters):
        s = X @ w + b
        r = 1.0 / (1.0 + np.exp(-s)) - y
        w -= lr * (X.T @ r / n + l2 * w)
        b -= lr * r.mean()
    return w, b


kernels_numpy = SimpleNamespace(
    pair_sqdists=_np_pair_sqdists,
    rbf_within_mean=_np_rbf_within_mean,
    rbf_mean_sqd=_np_rbf_mean_sqd,
    rbf_cross_mean=_np_rbf_cross_mean,
    logistic_gd=_np_logistic_gd,
)


# numba implementations

if HAVE_NUMBA:
    njit = _nb.njit(cache=True, fastmath=False)

    @njit
    def _nb_pair_sqdists(X):
        n, p = X.shape
        out = np.empty(n * (n - 1) // 2)
        k = 0
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.0
                for c in range(p):
                    diff = X[i, c] - X[j, c]
                    s += diff * diff
                out[k] = s
                k += 1
        return out

    @njit
    def _nb_rbf_within_mean(X, gamma):
        n, p = X.shape
        total = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.0
                for c in range(p):
                    diff = X[i, c] - X[j, c]
                    s += diff * diff
                total += np.exp(-gamma * s)
        return 2.0 * total / (n * (n - 1))

    @njit
    def _nb_rbf_mean_sqd(d, gamma):
        total = 0.0
        for k in range(d.size):
            total += np.exp(-gamma * d[k])
        return total / d.size

    @njit
    def _nb_rbf_cross_mean(X, Y, gamma):
        n, p = X.shape
        m = Y.shape[0]
        total = 0.0
        for i in range(n):
            for j in range(m):
                s = 0.0
                for c in range(p):
                    diff = X[i, c] - Y[j, c]
                    s += diff * diff
                total += np.exp(-gamma * s)
        return total / (n * m)

    @njit
    def _nb_logistic_gd(X, y, iters, lr, l2):
        n, p = X.shape
        w = np.zeros(p)
        b = 0.0
        gw = np.empty(p)
        for _ in range(iters):
            gw[:] = 0.0
            gb = 0.0
            for i in range(n):
                s = b
                for c in range(p):
                    s += X[i, c] * w[c]
                r = 1.0 / (1.0 + np.exp(-s)) - y[i]
                gb += r
                for c in range(p):
                    gw[c] += r * X[i, c]
            for c in range(p):
                w[c] -= lr * (gw[c] / n + l2 * w[c])
            b -= lr * gb / n
        return w, b

    kernels_numba = SimpleNamespace(
        pair_sqdists=_nb_pair_sqdists,
        rbf_within_mean=_nb_rbf_within_mean,
        rbf_mean_sqd=_nb_rbf_mean_sqd,
        rbf_cross_mean=_nb_rbf_cross_mean,
        logistic_gd=_nb_logistic_gd,
    )
else:  # pragma: no cover
    kernels_numba = None

USE_NUMBA = HAVE_NUMBA and not DISABLED

# numpy's vectorized exp beats a scalar jitted loop on the kernel reductions
# (see benchmarks/bench_kernels.py), so only the iterative solver is jitted
kernels_fast = kernels_numpy if not USE_NUMBA else SimpleNamespace(
    pair_sqdists=_np_pair_sqdists,
    rbf_within_mean=_np_rbf_within_mean,
    rbf_mean_sqd=_np_rbf_mean_sqd,
    rbf_cross_mean=_np_rbf_cross_mean,
    logistic_gd=_nb_logistic_gd,
)
kernels = kernels_fast if USE_NUMBA else kernels_numpy
