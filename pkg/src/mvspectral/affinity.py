"""Per-view affinity matrices: k-NN Gaussian kernels over learned embeddings.

A :class:`SiameseContext` owns one view's embedder (or the identity when
disabled) and the view's global kernel scale, calibrated once on training data
as the median distance to each point's nearest neighbors. Batch affinities are
built within the batch: Gaussian kernel on the k-NN graph, symmetrized by
averaging, zero diagonal.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import net as nn
from .errors import DegenerateDataError, TrainingError


@dataclass
class AffinityConfig:
    n_neighbors: int = 10
    scale_mode: str = "global_median"
    kernel_sigma: float = None   # overrides the calibrated scale when set
    symmetrize: str = "average"

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.scale_mode != "global_median":
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")
        if self.symmetrize != "average":
            raise ValueError(f"unknown symmetrize {self.symmetrize!r}")
        if self.kernel_sigma is not None and self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")


@dataclass
class SiameseContext:
    """One view's embedder plus its calibrated kernel scale.

    ``embedder=None`` means the identity pass-through (Siamese disabled);
    otherwise embeddings are the row-normalized MLP outputs.
    """

    embedder: nn.Mlp = None
    sigma: float = None
    trained: bool = False

    @classmethod
    def identity(cls):
        return cls(embedder=None, sigma=None, trained=True)

    @classmethod
    def create(cls, input_dim, hidden_dims, embed_dim, seed=0, activation="relu"):
        dims = [input_dim] + list(hidden_dims) + [embed_dim]
        return cls(embedder=nn.Mlp.init(dims, activation=activation, seed=seed))

    def embed(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.embedder is None:
            return x
        out, _ = nn.forward(self.embedder, x)
        return _row_normalize(out)


def _row_normalize(y):
    norms = np.sqrt((y * y).sum(axis=1, keepdims=True))
    return y / np.maximum(norms, 1e-12)


def knn_indices(points, n_neighbors):
    """Indices of each row's nearest neighbors by Euclidean distance.

    Self-distances are excluded; ties resolve to the lower index (stable sort).
    """
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if n_neighbors >= m:
        raise ValueError(f"n_neighbors={n_neighbors} must be < {m} points")
    d2 = _kernels.pairwise_sq_dists(points)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :n_neighbors]


def make_siamese_pairs(view, n_neighbors, negatives_per_anchor, seed):
    """Training pairs: positives from the k-NN graph, uniform negatives from
    outside it. Returns (anchor_idx, other_idx, label) with label 1/0."""
    view = np.asarray(view, dtype=np.float64)
    n = view.shape[0]
    knn = knn_indices(view, n_neighbors)
    rng = np.random.default_rng(seed)

    anchors = [np.repeat(np.arange(n), n_neighbors)]
    others = [knn.ravel()]
    labels = [np.ones(n * n_neighbors, dtype=np.int64)]

    neg_anchor = np.repeat(np.arange(n), negatives_per_anchor)
    neg_other = np.empty(n * negatives_per_anchor, dtype=np.int64)
    for i in range(n):
        excluded = set(knn[i])
        excluded.add(i)
        lo = i * negatives_per_anchor
        for t in range(negatives_per_anchor):
            j = int(rng.integers(n))
            while j in excluded:
                j = int(rng.integers(n))
            neg_other[lo + t] = j
    anchors.append(neg_anchor)
    others.append(neg_other)
    labels.append(np.zeros(n * negatives_per_anchor, dtype=np.int64))

    return (
        np.concatenate(anchors),
        np.concatenate(others),
        np.concatenate(labels),
    )


def _contrastive_loss_and_grads(embedder, xa, xb, labels, margin):
    """Mean contrastive loss over pairs and gradients w.r.t. the embedder.

    Embeddings are row-normalized before the distance; positives are pulled by
    the squared distance, negatives pushed by max(0, margin - distance)^2.
    """
    ya, cache_a = nn.forward(embedder, xa)
    yb, cache_b = nn.forward(embedder, xb)
    za, zb = _row_normalize(ya), _row_normalize(yb)
    diff = za - zb
    d2 = (diff * diff).sum(axis=1)
    d = np.sqrt(np.maximum(d2, 1e-24))

    pos = labels == 1
    hinge = np.maximum(margin - d, 0.0)
    n_pairs = len(labels)
    loss = (np.sum(d2[pos]) + np.sum(hinge[~pos] ** 2)) / n_pairs

    # d(loss)/d(diff): positives 2*diff, negatives -2*hinge*diff/d
    coef = np.where(pos, 2.0, -2.0 * hinge / d) / n_pairs
    g_diff = coef[:, None] * diff
    g_za, g_zb = g_diff, -g_diff

    grads_a, _ = nn.backward(embedder, cache_a, _normalize_backward(ya, g_za))
    grads_b, _ = nn.backward(embedder, cache_b, _normalize_backward(yb, g_zb))
    total = [ga + gb for ga, gb in zip(grads_a, grads_b)]
    return loss, total


def _normalize_backward(y, g_z):
    """Backprop through z = y / ||y|| rowwise."""
    norms = np.maximum(np.sqrt((y * y).sum(axis=1, keepdims=True)), 1e-12)
    z = y / norms
    return (g_z - z * (z * g_z).sum(axis=1, keepdims=True)) / norms


def train_siamese(
    ctx,
    view,
    config,
    epochs,
    seed,
    negatives_per_anchor=None,
    margin=1.0,
    lr=1e-3,
    batch_pairs=512,
):
    """Train the context's embedder on neighbor/non-neighbor pairs.

    Pairs are built once from the k-NN graph of the raw view; epochs shuffle
    and consume them in mini-batches under Adam. Deterministic per seed.
    """
    if ctx.embedder is None:
        ctx.trained = True
        return ctx
    view = np.asarray(view, dtype=np.float64)
    if negatives_per_anchor is None:
        negatives_per_anchor = config.n_neighbors
    anchors, others, labels = make_siamese_pairs(
        view, config.n_neighbors, negatives_per_anchor, seed
    )
    rng = np.random.default_rng(seed)
    state = nn.AdamState.for_net(ctx.embedder, lr)
    n_pairs = len(labels)
    for epoch in range(epochs):
        perm = rng.permutation(n_pairs)
        for lo in range(0, n_pairs, batch_pairs):
            idx = perm[lo:lo + batch_pairs]
            loss, grads = _contrastive_loss_and_grads(
                ctx.embedder, view[anchors[idx]], view[others[idx]],
                labels[idx], margin,
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"siamese loss diverged at epoch {epoch}", epoch=epoch
                )
            nn.adam_step(state, ctx.embedder.parameters(), grads)
    ctx.trained = True
    return ctx


def calibrate_scale(ctx, view, n_neighbors):
    """Global median scale: median embedded distance to each point's nearest
    neighbors, over all (point, neighbor) pairs of the given data."""
    z = ctx.embed(view)
    m = z.shape[0]
    if n_neighbors >= m:
        raise ValueError(f"n_neighbors={n_neighbors} must be < {m} points")
    d2 = _kernels.pairwise_sq_dists(z)
    np.fill_diagonal(d2, np.inf)
    nearest = np.sort(d2, axis=1)[:, :n_neighbors]
    sigma = float(np.median(np.sqrt(nearest)))
    if sigma <= 0.0:
        raise DegenerateDataError("all neighbor distances are zero")
    ctx.sigma = sigma
    return sigma


def batch_affinity(ctx, batch, config):
    """Within-batch affinity matrix for one view.

    Gaussian kernel exp(-d^2 / (2 sigma^2)) on embedded distances, restricted
    to each point's nearest neighbors inside the batch, then symmetrized by
    averaging. Diagonal is zero; entries lie in [0, 1].
    """
    z = ctx.embed(batch)
    m = z.shape[0]
    if m <= config.n_neighbors:
        raise ValueError(
            f"batch of {m} too small for n_neighbors={config.n_neighbors}"
        )
    sigma = config.kernel_sigma if config.kernel_sigma is not None else ctx.sigma
    if sigma is None:
        raise ValueError("kernel scale not calibrated and no override given")
    d2 = _kernels.pairwise_sq_dists(z)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :config.n_neighbors]
    w = np.zeros((m, m))
    rows = np.repeat(np.arange(m), config.n_neighbors)
    cols = order.ravel()
    w[rows, cols] = np.exp(-d2[rows, cols] / (2.0 * sigma * sigma))
    w = 0.5 * (w + w.T)
    return w
