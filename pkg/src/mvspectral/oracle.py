"""Exact reference computations: Laplacians, dense eigendecompositions,
subspace distances, and planted commuting test matrices.

Everything here is dense and meant for moderate n; it is the ground truth the
stochastic model is checked against, not a scalable solver.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass
class LaplacianSet:
    """Symmetric PSD matrices sharing an (optional) planted eigenbasis."""

    laplacians: list
    basis: np.ndarray = None       # planted orthonormal eigenvectors
    eigenvalues: list = None       # one vector per member, aligned to basis


def laplacian(w):
    """Unnormalized graph Laplacian L = D - W of a symmetric affinity matrix."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("affinity matrix must be square")
    if np.max(np.abs(w - w.T)) > 1e-10:
        raise ValueError("affinity matrix must be symmetric")
    return np.diag(w.sum(axis=1)) - w


def avg_laplacian(laplacians, weights=None):
    """Weighted combination of Laplacians; plain entrywise mean by default."""
    mats = [np.asarray(l, dtype=np.float64) for l in laplacians]
    shape = mats[0].shape
    for l in mats:
        if l.shape != shape:
            raise ValueError("Laplacians must share a shape")
    if weights is None:
        weights = np.full(len(mats), 1.0 / len(mats))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(mats),):
            raise ValueError("one weight per Laplacian required")
    out = np.zeros(shape)
    for a, l in zip(weights, mats):
        out += a * l
    return out


def smallest_eigvecs(mat, k):
    """The k smallest eigenpairs of a symmetric matrix, eigenvalues ascending."""
    mat = np.asarray(mat, dtype=np.float64)
    if np.max(np.abs(mat - mat.T)) > 1e-8:
        raise ValueError("matrix must be symmetric")
    if k > mat.shape[0]:
        raise ValueError("k exceeds the matrix size")
    vals, vecs = scipy.linalg.eigh(mat, subset_by_index=(0, k - 1))
    return vecs, vals


def grassmann_distance_sq(u1, u2):
    """Squared Grassmann distance between the column spans: sum of squared
    sines of the principal angles, in [0, k]. Inputs are re-orthonormalized."""
    q1 = _orthonormalize(u1)
    q2 = _orthonormalize(u2)
    if q1.shape != q2.shape:
        raise ValueError("subspaces must have matching shapes")
    k = q1.shape[1]
    # singular values of Q1^T Q2 are the cosines of the principal angles
    c = q1.T @ q2
    return float(k - np.sum(c * c))


def _orthonormalize(u):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError("expected an n x k matrix")
    q, r = np.linalg.qr(u)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise ValueError("input columns are rank deficient")
    return q


def offdiag_ratio(y, lap):
    """How far Y^T L Y is from diagonal: Frobenius mass of the off-diagonal
    over the total. 0 means Y exactly diagonalizes L."""
    y = np.asarray(y, dtype=np.float64)
    m = y.T @ np.asarray(lap, dtype=np.float64) @ y
    total = np.linalg.norm(m)
    if total == 0.0 or m.shape[0] == 1:
        return 0.0
    off = m - np.diag(np.diag(m))
    return float(np.linalg.norm(off) / total)


def make_commuting_laplacian_like(n, n_views, seed):
    """Plant a family of commuting, symmetric PSD, zero-row-sum matrices.

    One orthonormal basis U (first column constant) is shared by all members.
    The summed spectrum is drawn with guaranteed gaps and split across members
    with random non-negative proportions, so the sum has a simple spectrum and
    its eigenvectors are numerically well determined.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    rng = np.random.default_rng(seed)

    g = rng.normal(size=(n, n))
    g[:, 0] = 1.0 / np.sqrt(n)
    q, r = np.linalg.qr(g)
    basis = q * np.sign(np.diag(r))

    # strictly increasing summed eigenvalues, zero first (shared nullspace)
    total = np.concatenate(([0.0], np.cumsum(rng.uniform(0.2, 1.0, size=n - 1))))
    shares = rng.dirichlet(np.ones(n_views), size=n)      # rows sum to 1
    eigenvalues = [total * shares[:, v] for v in range(n_views)]

    laplacians = [
        (basis * vals) @ basis.T for vals in eigenvalues
    ]
    laplacians = [0.5 * (l + l.T) for l in laplacians]
    return LaplacianSet(laplacians, basis=basis, eigenvalues=eigenvalues)
