"""Clustering evaluation: k-means, matched accuracy, NMI, ARI, degradation.

The accuracy matching uses the Hungarian algorithm on the contingency matrix;
NMI normalizes mutual information by the geometric mean of the entropies
(natural log). k-means is k-means++ with Lloyd iterations, best of several
restarts by inertia, deterministic per seed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels


def kmeans(points, num_clusters, seed=0, restarts=10, max_iter=300, tol=1e-8):
    """Cluster rows of ``points``; returns (labels, inertia).

    Empty clusters are re-seeded at the point farthest from its centroid.
    Restarts are ranked by inertia with ties going to the earlier restart.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if num_clusters > n:
        raise ValueError("more clusters than points")
    best_labels, best_inertia = None, np.inf
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, inertia = _lloyd(points, num_clusters, rng, max_iter, tol)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return best_labels, float(best_inertia)


def _kmeanspp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points, k, rng, max_iter, tol):
    centroids = _kmeanspp_init(points, k, rng)
    labels, d2 = _kernels.kmeans_assign(points, centroids)
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            taken = d2.copy()
            for e in empties:
                far = int(np.argmax(taken))
                centroids[e] = points[far]
                taken[far] = -np.inf
            labels, d2 = _kernels.kmeans_assign(points, centroids)
            counts = np.bincount(labels, minlength=k)
        new_centroids = np.zeros_like(centroids)
        np.add.at(new_centroids, labels, points)
        new_centroids /= np.maximum(counts, 1)[:, None]
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        labels, d2 = _kernels.kmeans_assign(points, centroids)
        if shift < tol:
            break
    return labels, d2.sum()


def contingency(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("label vectors must have equal length")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def clustering_accuracy(pred, truth):
    """Fraction matched under the best label bijection (Hungarian on the
    contingency matrix)."""
    table = contingency(pred, truth)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / len(np.asarray(pred))


def nmi(pred, truth):
    """Normalized mutual information, geometric-mean normalization.

    Two constant labelings agree perfectly (1.0 by convention); exactly one
    constant labeling carries no information (0.0).
    """
    table = contingency(pred, truth).astype(np.float64)
    n = table.sum()
    pij = table / n
    pi = pij.sum(axis=1)
    pj = pij.sum(axis=0)
    h_pred = -np.sum(pi[pi > 0] * np.log(pi[pi > 0]))
    h_true = -np.sum(pj[pj > 0] * np.log(pj[pj > 0]))
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    nz = pij > 0
    mi = np.sum(pij[nz] * np.log(pij[nz] / np.outer(pi, pj)[nz]))
    return float(mi / np.sqrt(h_pred * h_true))


def ari(pred, truth):
    """Adjusted Rand index by pair counting, chance-corrected."""
    table = contingency(pred, truth).astype(np.float64)
    n = table.sum()

    def comb2(x):
        return x * (x - 1.0) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def relative_degradation(clean_metric, contaminated_metric):
    """Percentage drop relative to the uncontaminated baseline."""
    if clean_metric <= 0:
        raise ValueError("clean metric must be positive")
    return 100.0 * (clean_metric - contaminated_metric) / clean_metric


@dataclass
class EvalReport:
    acc: float
    nmi: float
    ari: float
    grassmann_dist_sq: float = None
    offdiag_ratios: list = None
    degradation_pct: float = None
    seed: int = 0
    config_echo: dict = field(default_factory=dict)

    def to_text(self):
        lines = [
            f"acc: {self.acc:.6f}",
            f"nmi: {self.nmi:.6f}",
            f"ari: {self.ari:.6f}",
        ]
        if self.grassmann_dist_sq is not None:
            lines.append(f"grassmann_dist_sq: {self.grassmann_dist_sq:.6f}")
        if self.offdiag_ratios is not None:
            joined = ",".join(f"{r:.6f}" for r in self.offdiag_ratios)
            lines.append(f"offdiag_ratios: {joined}")
        if self.degradation_pct is not None:
            lines.append(f"degradation_pct: {self.degradation_pct:.6f}")
        lines.append(f"seed: {self.seed}")
        for key in sorted(self.config_echo):
            lines.append(f"config.{key}: {self.config_echo[key]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {}
        config_echo = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if key.startswith("config."):
                config_echo[key[len("config."):]] = value
            else:
                fields[key] = value
        report = cls(
            acc=float(fields["acc"]),
            nmi=float(fields["nmi"]),
            ari=float(fields["ari"]),
            seed=int(fields.get("seed", 0)),
            config_echo=config_echo,
        )
        if "grassmann_dist_sq" in fields:
            report.grassmann_dist_sq = float(fields["grassmann_dist_sq"])
        if "offdiag_ratios" in fields:
            report.offdiag_ratios = [
                float(x) for x in fields["offdiag_ratios"].split(",")
            ]
        if "degradation_pct" in fields:
            report.degradation_pct = float(fields["degradation_pct"])
        return report
