"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

The inner loops that dominate runtime (all-pairs distances inside a batch,
affinity-weighted loss sums, k-means assignment) are compiled with
``numba.njit``. Setting the environment variable ``MVSPECTRAL_NO_NUMBA=1``
before import selects the pure-numpy implementations instead; the same
fallback is used automatically when numba is not importable.

Both implementations of every kernel are kept importable (``_*_np`` /
``_*_nb``) so the test suite and ``benchmarks/bench_kernels.py`` can compare
them directly. Matrix products are deliberately left to numpy/BLAS; numba
only carries the loops BLAS cannot express.
"""

import os

import numpy as np

_NO_NUMBA_ENV = os.environ.get("MVSPECTRAL_NO_NUMBA", "").strip().lower()
_FORCED_OFF = _NO_NUMBA_ENV in ("1", "true", "yes", "on")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag instead
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and not _FORCED_OFF
BACKEND = "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _pairwise_sq_dists_np(x):
    """All-pairs squared Euclidean distances, (n, n) from (n, d).

    Uses the direct difference formula (not the ``|a|^2+|b|^2-2ab`` expansion)
    so tiny distances keep full precision; chunked to bound memory.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    step = 256
    for i0 in range(0, n, step):
        blk = x[i0:i0 + step]
        diff = blk[:, None, :] - x[None, :, :]
        out[i0:i0 + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _weighted_sq_dist_sum_np(y, w):
    """sum_ij w[i,j] * ||y_i - y_j||^2 for a dense symmetric weight matrix."""
    d2 = _pairwise_sq_dists_np(y)
    return float(np.sum(w * d2))


def _kmeans_assign_np(x, centroids):
    """Nearest-centroid labels and squared distances. Ties -> lowest index."""
    diff = x[:, None, :] - centroids[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), d2[np.arange(x.shape[0]), labels]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _pairwise_sq_dists_nb(x):
        n, d = x.shape
        out = np.empty((n, n), dtype=np.float64)
        for i in range(n):
            out[i, i] = 0.0
            for j in range(i + 1, n):
                s = 0.0
                for t in range(d):
                    diff = x[i, t] - x[j, t]
                    s += diff * diff
                out[i, j] = s
                out[j, i] = s
        return out

    @njit(cache=True)
    def _weighted_sq_dist_sum_nb(y, w):
        n, k = y.shape
        total = 0.0
        for i in range(n):
            for j in range(n):
                wij = w[i, j]
                if wij == 0.0:
                    continue
                s = 0.0
                for t in range(k):
                    diff = y[i, t] - y[j, t]
                    s += diff * diff
                total += wij * s
        return total

    @njit(cache=True)
    def _kmeans_assign_nb(x, centroids):
        n, d = x.shape
        c = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        dists = np.empty(n, dtype=np.float64)
        for i in range(n):
            best = np.inf
            best_j = 0
            for j in range(c):
                s = 0.0
                for t in range(d):
                    diff = x[i, t] - centroids[j, t]
                    s += diff * diff
                if s < best:
                    best = s
                    best_j = j
            labels[i] = best_j
            dists[i] = best
        return labels, dists


# ---------------------------------------------------------------------------
# public bindings
# ---------------------------------------------------------------------------

def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if NUMBA_ENABLED:

    def pairwise_sq_dists(x):
        return _pairwise_sq_dists_nb(_as_f64(x))

    def weighted_sq_dist_sum(y, w):
        return float(_weighted_sq_dist_sum_nb(_as_f64(y), _as_f64(w)))

    def kmeans_assign(x, centroids):
        return _kmeans_assign_nb(_as_f64(x), _as_f64(centroids))

else:

    def pairwise_sq_dists(x):
        return _pairwise_sq_dists_np(_as_f64(x))

    def weighted_sq_dist_sum(y, w):
        return _weighted_sq_dist_sum_np(_as_f64(y), _as_f64(w))

    def kmeans_assign(x, centroids):
        return _kmeans_assign_np(_as_f64(x), _as_f64(centroids))


def warmup():
    """Trigger JIT compilation of every kernel (no-op on the numpy backend)."""
    x = np.random.default_rng(0).normal(size=(4, 3))
    pairwise_sq_dists(x)
    weighted_sq_dist_sum(x, np.ones((4, 4)))
    kmeans_assign(x, x[:2])
