"""Fused multi-view spectral embedding model.

Per-view encoder networks map each view to a k-dimensional representation.
A weighting network turns the concatenated raw input into a per-sample
simplex vector used twice: to fuse the view representations into one output,
and to rescale the affinity entries so unreliable samples stop anchoring
their neighbors. A fixed linear layer holding the inverse triangular factor
of the latest batch QR keeps the outputs orthonormal.

Training alternates two kinds of steps on disjoint mini-batches: an
orthogonalization step that refreshes the triangular factor from a fresh
batch, and a gradient step that backpropagates the affinity-weighted loss
through every network while the orthogonalization weights stay constant.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from . import net as nn
from .affinity import AffinityConfig, SiameseContext, batch_affinity
from .errors import IllConditionedBatchError, StateError, TrainingError

FUSION_MODES = ("weighting", "simple_average", "concat", "linear")


@dataclass
class FusedSpectralModel:
    view_nets: list                 # one Mlp per view, all mapping to embed_dim
    fusion_net: nn.Mlp              # concat(views) -> V logits (weighting mode)
    linear_net: nn.Mlp              # concat(embeddings) -> embed_dim (linear mode)
    embed_dim: int
    temperature: float
    fusion_mode: str = "weighting"
    ortho_weights: np.ndarray = None
    frozen: bool = False

    @property
    def n_views(self):
        return len(self.view_nets)

    @property
    def output_dim(self):
        if self.fusion_mode == "concat":
            return self.embed_dim * self.n_views
        return self.embed_dim

    def trainable_nets(self):
        nets = {f"view_{v}": net for v, net in enumerate(self.view_nets)}
        if self.fusion_mode == "weighting":
            nets["fusion"] = self.fusion_net
        if self.fusion_mode == "linear":
            nets["linear"] = self.linear_net
        return nets


def create_model(
    view_dims,
    embed_dim,
    hidden_dims=(64, 64),
    fusion_hidden_dims=(32,),
    temperature=5.0,
    fusion_mode="weighting",
    seed=0,
    activation="relu",
):
    """Build the networks with per-net seeds derived from ``seed``."""
    if fusion_mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {fusion_mode!r}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    n_views = len(view_dims)
    if n_views < 1:
        raise ValueError("need at least one view")
    view_nets = [
        nn.Mlp.init(
            [d] + list(hidden_dims) + [embed_dim],
            activation=activation,
            seed=seed * 1000 + v,
        )
        for v, d in enumerate(view_dims)
    ]
    cat_dim = int(sum(view_dims))
    fusion_net = nn.Mlp.init(
        [cat_dim] + list(fusion_hidden_dims) + [n_views],
        activation=activation,
        seed=seed * 1000 + 500,
    )
    linear_net = nn.Mlp.init(
        [embed_dim * n_views, embed_dim], seed=seed * 1000 + 501
    )
    return FusedSpectralModel(
        view_nets=view_nets,
        fusion_net=fusion_net,
        linear_net=linear_net,
        embed_dim=embed_dim,
        temperature=temperature,
        fusion_mode=fusion_mode,
    )


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def view_forward(model, batch_views):
    """Per-view representations, one (m, embed_dim) matrix per view."""
    return [out for out, _ in _view_forward_cached(model, batch_views)]


def _view_forward_cached(model, batch_views):
    if len(batch_views) != model.n_views:
        raise ValueError("wrong number of views for this model")
    return [nn.forward(net, x) for net, x in zip(model.view_nets, batch_views)]


def _softmax_rows(u):
    shifted = u - u.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def fusion_weights(model, batch_views):
    """Per-sample simplex weights from the weighting network."""
    if model.fusion_mode != "weighting":
        raise ValueError("fusion weights are only defined in weighting mode")
    alpha, _, _ = _fusion_weights_cached(model, batch_views)
    return alpha


def _fusion_weights_cached(model, batch_views):
    cat = np.hstack([np.asarray(v, dtype=np.float64) for v in batch_views])
    logits, cache = nn.forward(model.fusion_net, cat)
    if not np.all(np.isfinite(logits)):
        raise TrainingError("non-finite fusion logits")
    alpha = _softmax_rows(logits / model.temperature)
    return alpha, logits, cache


def fuse(view_outputs, alpha=None, mode="weighting", linear_net=None):
    """Combine per-view representations into the pre-orthogonalization output.

    weighting/simple_average take the alpha-weighted sum (uniform alpha when
    none is given); concat stacks along columns; linear stacks and applies a
    trainable linear map.
    """
    n_views = len(view_outputs)
    if mode in ("weighting", "simple_average"):
        if alpha is None:
            alpha = np.full((view_outputs[0].shape[0], n_views), 1.0 / n_views)
        out = np.zeros_like(view_outputs[0])
        for v, y in enumerate(view_outputs):
            out += alpha[:, v:v + 1] * y
        return out
    cat = np.hstack(view_outputs)
    if mode == "concat":
        return cat
    if mode == "linear":
        out, _ = nn.forward(linear_net, cat)
        return out
    raise ValueError(f"unknown fusion mode {mode!r}")


@dataclass
class _Forward:
    view_outputs: list
    view_caches: list
    alpha: np.ndarray       # (m, V) or None for concat/linear
    logits_cache: tuple     # fusion net cache or None
    cat_outputs: np.ndarray
    linear_cache: list
    fused: np.ndarray       # pre-orthogonalization output


def _forward_full(model, batch_views):
    pairs = _view_forward_cached(model, batch_views)
    ys = [out for out, _ in pairs]
    caches = [cache for _, cache in pairs]
    m = ys[0].shape[0]
    alpha = None
    logits_cache = None
    cat_outputs = None
    linear_cache = None

    if model.fusion_mode == "weighting":
        alpha, _, logits_cache = _fusion_weights_cached(model, batch_views)
        fused = fuse(ys, alpha, "weighting")
    elif model.fusion_mode == "simple_average":
        alpha = np.full((m, model.n_views), 1.0 / model.n_views)
        fused = fuse(ys, alpha, "simple_average")
    elif model.fusion_mode == "concat":
        fused = np.hstack(ys)
        cat_outputs = fused
    else:  # linear
        cat_outputs = np.hstack(ys)
        fused_out, linear_cache = nn.forward(model.linear_net, cat_outputs)
        fused = fused_out
    return _Forward(ys, caches, alpha, logits_cache, cat_outputs, linear_cache, fused)


# ---------------------------------------------------------------------------
# orthogonalization layer
# ---------------------------------------------------------------------------

def ortho_step(model, batch_views):
    """Refresh the orthogonalization weights from this batch.

    QR-factorizes the fused output with a positive-diagonal convention and
    stores the inverse triangular factor; the orthogonalized batch output is
    returned. Numerically rank-deficient batches raise
    :class:`IllConditionedBatchError` so the trainer can resample.
    """
    fwd = _forward_full(model, batch_views)
    ytilde = fwd.fused
    if ytilde.shape[0] < ytilde.shape[1]:
        raise ValueError("batch smaller than the output dimension")
    q, r = np.linalg.qr(ytilde)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    r = signs[:, None] * r
    q = q * signs
    diag = np.abs(np.diag(r))
    if diag.min() < 1e-10 * diag.max():
        raise IllConditionedBatchError(
            "fused batch output is numerically rank deficient"
        )
    model.ortho_weights = scipy.linalg.solve_triangular(
        r, np.eye(r.shape[0]), lower=False
    )
    return q


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _weighted_affinities(affinities, alpha):
    """Entrywise reweighting W~ = W * alpha_i * alpha_j per view."""
    if alpha is None:
        return [np.asarray(w, dtype=np.float64) for w in affinities]
    return [
        np.asarray(w, dtype=np.float64)
        * np.outer(alpha[:, v], alpha[:, v])
        for v, w in enumerate(affinities)
    ]


def loss_pairwise(outputs, affinities, alpha=None):
    """Affinity-weighted mean squared output distance:
    (1 / (m^2 V)) sum_v sum_ij W~_ij ||y_i - y_j||^2."""
    y = np.asarray(outputs, dtype=np.float64)
    m = y.shape[0]
    n_views = len(affinities)
    wt = _weighted_affinities(affinities, alpha)
    w_sum = np.zeros((m, m))
    for w in wt:
        if w.shape != (m, m):
            raise ValueError("affinity shape does not match the batch")
        w_sum += w
    return _kernels.weighted_sq_dist_sum(y, w_sum) / (m * m * n_views)


def loss_trace(outputs, affinities, alpha=None):
    """Same quantity through the Laplacian trace route:
    (2 / (m^2 V)) Tr(Y^T sum_v L~^(v) Y) with L~ = D~ - W~."""
    y = np.asarray(outputs, dtype=np.float64)
    m = y.shape[0]
    n_views = len(affinities)
    total = 0.0
    for w in _weighted_affinities(affinities, alpha):
        if w.shape != (m, m):
            raise ValueError("affinity shape does not match the batch")
        lap = np.diag(w.sum(axis=1)) - w
        total += float(np.trace(y.T @ lap @ y))
    return 2.0 * total / (m * m * n_views)


# ---------------------------------------------------------------------------
# gradient step
# ---------------------------------------------------------------------------

def loss_and_grads(model, batch_views, affinities):
    """Loss and exact gradients for every trainable network.

    The affinity matrices and the orthogonalization weights are constants
    here; the simplex weights are differentiated along both of their paths
    (the fused sum and the affinity reweighting).

    Returns ``(loss, grads)`` with grads keyed like ``trainable_nets()``.
    """
    if model.ortho_weights is None:
        raise StateError("run an orthogonalization step before a gradient step")
    fwd = _forward_full(model, batch_views)
    ortho = model.ortho_weights
    y = fwd.fused @ ortho
    m = y.shape[0]
    n_views = model.n_views
    c = 1.0 / (m * m * n_views)
    alpha = fwd.alpha

    wt = _weighted_affinities(affinities, alpha)
    wt_sum = np.zeros((m, m))
    for w in wt:
        wt_sum += w
    d2 = _kernels.pairwise_sq_dists(y)
    loss = c * float(np.sum(wt_sum * d2))
    if not np.isfinite(loss):
        raise TrainingError("non-finite training loss")

    # d loss / d Y = 4c * (sum_v L~_v) Y with L~ = diag(rowsum) - W~
    lap_y = wt_sum.sum(axis=1)[:, None] * y - wt_sum @ y
    g_y = 4.0 * c * lap_y
    g_fused = g_y @ ortho.T

    grads = {}
    if model.fusion_mode in ("weighting", "simple_average"):
        for v, (net, cache) in enumerate(zip(model.view_nets, fwd.view_caches)):
            g_view = alpha[:, v:v + 1] * g_fused
            grads[f"view_{v}"], _ = nn.backward(net, cache, g_view)
        if model.fusion_mode == "weighting":
            # alpha path 1: through the fused sum
            g_alpha = np.stack(
                [(g_fused * yv).sum(axis=1) for yv in fwd.view_outputs], axis=1
            )
            # alpha path 2: through the reweighted affinities
            for v, w in enumerate(affinities):
                g_alpha[:, v] += 2.0 * c * (
                    (np.asarray(w, dtype=np.float64) * d2) @ alpha[:, v]
                )
            # softmax (with temperature) backward, rowwise
            inner = (g_alpha * alpha).sum(axis=1, keepdims=True)
            g_logits = alpha * (g_alpha - inner) / model.temperature
            grads["fusion"], _ = nn.backward(
                model.fusion_net, fwd.logits_cache, g_logits
            )
    elif model.fusion_mode == "concat":
        k = model.embed_dim
        for v, (net, cache) in enumerate(zip(model.view_nets, fwd.view_caches)):
            grads[f"view_{v}"], _ = nn.backward(
                net, cache, g_fused[:, v * k:(v + 1) * k]
            )
    else:  # linear
        k = model.embed_dim
        grads["linear"], g_cat = nn.backward(
            model.linear_net, fwd.linear_cache, g_fused
        )
        for v, (net, cache) in enumerate(zip(model.view_nets, fwd.view_caches)):
            grads[f"view_{v}"], _ = nn.backward(
                net, cache, g_cat[:, v * k:(v + 1) * k]
            )
    return loss, grads


def grad_step(model, batch_views, contexts, affinity_config, adam_states):
    """One gradient step: build batch affinities, backpropagate, apply Adam."""
    affinities = [
        batch_affinity(ctx, x, affinity_config)
        for ctx, x in zip(contexts, batch_views)
    ]
    loss, grads = loss_and_grads(model, batch_views, affinities)
    for name, net in model.trainable_nets().items():
        nn.adam_step(adam_states[name], net.parameters(), grads[name])
    return loss


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 60
    lr_policy: nn.LrPolicy = field(default_factory=nn.LrPolicy)
    affinity: AffinityConfig = field(default_factory=AffinityConfig)
    seed: int = 0
    fusion_mode: str = "weighting"
    weight_decay: float = 0.0
    max_batch_retries: int = 10

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size <= self.affinity.n_neighbors:
            raise ValueError("batch_size must exceed n_neighbors")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")


def _batch_loss(model, batch_views, contexts, affinity_config):
    """Loss of one evaluation batch with the batch's own orthogonalization.

    Monitoring uses a fresh triangular factor per batch (exactly what an
    orthogonalization step would produce there) so the measured value tracks
    the constrained objective instead of the scale drift of a stale factor.
    """
    affinities = [
        batch_affinity(ctx, x, affinity_config)
        for ctx, x in zip(contexts, batch_views)
    ]
    fwd = _forward_full(model, batch_views)
    q, r = np.linalg.qr(fwd.fused)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return loss_pairwise(q * signs, affinities, fwd.alpha)


def validation_loss(model, views, contexts, config):
    """Mean per-chunk loss over the validation split, in evaluation order."""
    n = views[0].shape[0]
    losses = []
    for lo in range(0, n, config.batch_size):
        hi = min(n, lo + config.batch_size)
        if hi - lo <= config.affinity.n_neighbors:
            break
        batch = [v[lo:hi] for v in views]
        losses.append(_batch_loss(model, batch, contexts, config.affinity))
    if not losses:
        raise ValueError("validation split too small for the neighbor count")
    return float(np.mean(losses))


def _ortho_with_resample(model, views, batch_idx, rng, config):
    idx = batch_idx
    for _ in range(config.max_batch_retries):
        try:
            ortho_step(model, [v[idx] for v in views])
            return
        except IllConditionedBatchError:
            idx = rng.choice(
                views[0].shape[0], size=config.batch_size, replace=False
            )
    raise IllConditionedBatchError(
        f"could not find a well-conditioned batch in "
        f"{config.max_batch_retries} attempts"
    )


def _snapshot_weights(model):
    state = {
        name: [p.copy() for p in net.parameters()]
        for name, net in model.trainable_nets().items()
    }
    state["__ortho__"] = (
        None if model.ortho_weights is None else model.ortho_weights.copy()
    )
    return state


def _restore_weights(model, state):
    for name, net in model.trainable_nets().items():
        for p, saved in zip(net.parameters(), state[name]):
            p[...] = saved
    model.ortho_weights = state["__ortho__"]


def train(model, train_views, val_views, config, contexts, epoch_hook=None,
          restore_best=True):
    """Coordinate-descent training: alternate orthogonalization and gradient
    steps over successive disjoint mini-batches, one validation pass per
    epoch, plateau learning-rate decay, freeze on completion.

    The validation loss is noisy under this scheme (the triangular factor is
    refit every other batch), so the parameters from the best validation
    epoch are restored before freezing unless ``restore_best`` is off.

    Returns a history dict with per-epoch train/val losses and learning rate.
    ``epoch_hook(model) -> float`` is recorded per epoch when given.
    """
    if model.fusion_mode != config.fusion_mode:
        raise ValueError("model and config disagree on the fusion mode")
    n = train_views[0].shape[0]
    m = config.batch_size
    if n < 2 * m:
        raise ValueError(
            "need at least two disjoint batches per epoch; lower batch_size"
        )
    for ctx in contexts:
        if not ctx.trained:
            raise StateError("siamese contexts must be trained before use")
        if ctx.sigma is None and config.affinity.kernel_sigma is None:
            raise StateError("kernel scales must be calibrated before training")

    history = {"train_loss": [], "val_loss": [], "lr": [], "hook": []}
    if config.epochs == 0:
        return history

    rng = np.random.default_rng(config.seed)
    adam_states = {
        name: nn.AdamState.for_net(
            net, config.lr_policy.initial_lr, weight_decay=config.weight_decay
        )
        for name, net in model.trainable_nets().items()
    }

    stopped = False
    best_val = np.inf
    best_state = None
    best_epoch = -1
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        losses = []
        try:
            for b in range(n // m):
                idx = perm[b * m:(b + 1) * m]
                if b % 2 == 0:
                    _ortho_with_resample(model, train_views, idx, rng, config)
                else:
                    losses.append(
                        grad_step(
                            model,
                            [v[idx] for v in train_views],
                            contexts,
                            config.affinity,
                            adam_states,
                        )
                    )
        except TrainingError as err:
            raise TrainingError(f"epoch {epoch}: {err}", epoch=epoch) from err

        val = validation_loss(model, val_views, contexts, config)
        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(val)
        history["lr"].append(next(iter(adam_states.values())).lr)
        if epoch_hook is not None:
            history["hook"].append(float(epoch_hook(model)))
        if val < best_val:
            best_val = val
            best_epoch = epoch
            if restore_best:
                best_state = _snapshot_weights(model)
        action = nn.lr_epoch_update(
            config.lr_policy, adam_states.values(), history["val_loss"]
        )
        if action == "stop":
            stopped = True
            break

    if restore_best and best_state is not None:
        _restore_weights(model, best_state)
    model.frozen = True
    history["stopped_early"] = stopped
    history["best_epoch"] = best_epoch
    history["best_val_loss"] = float(best_val)
    return history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def embed_with_weights(model, views):
    """Embeddings and fusion weights for arbitrary samples (frozen model)."""
    if not model.frozen:
        raise StateError("model must be frozen (trained) before embedding")
    fwd = _forward_full(model, views)
    return fwd.fused @ model.ortho_weights, fwd.alpha


def embed(model, views):
    """Map samples into the learned spectral space; rows follow the input."""
    return embed_with_weights(model, views)[0]


# ---------------------------------------------------------------------------
# checkpointing: a single .npz with one prefix block per network plus a JSON
# metadata entry (dims, temperature, fusion mode, kernel scales, config echo).
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, contexts, config_echo=None):
    arrays = {}
    meta = {
        "embed_dim": model.embed_dim,
        "temperature": model.temperature,
        "fusion_mode": model.fusion_mode,
        "n_views": model.n_views,
        "frozen": bool(model.frozen),
        "sigmas": [ctx.sigma for ctx in contexts],
        "siamese": [ctx.embedder is not None for ctx in contexts],
        "config": config_echo or {},
    }
    arrays["meta"] = np.array([json.dumps(meta)])
    for v, net in enumerate(model.view_nets):
        arrays.update(nn.mlp_to_arrays(net, f"view_{v}"))
    arrays.update(nn.mlp_to_arrays(model.fusion_net, "fusion"))
    arrays.update(nn.mlp_to_arrays(model.linear_net, "linear"))
    if model.ortho_weights is not None:
        arrays["ortho"] = model.ortho_weights
    for v, ctx in enumerate(contexts):
        if ctx.embedder is not None:
            arrays.update(nn.mlp_to_arrays(ctx.embedder, f"siamese_{v}"))
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (model, contexts, config_echo)."""
    with np.load(path, allow_pickle=False) as data:
        arrays = dict(data)
    meta = json.loads(str(arrays["meta"][0]))
    view_nets = [
        nn.mlp_from_arrays(arrays, f"view_{v}") for v in range(meta["n_views"])
    ]
    model = FusedSpectralModel(
        view_nets=view_nets,
        fusion_net=nn.mlp_from_arrays(arrays, "fusion"),
        linear_net=nn.mlp_from_arrays(arrays, "linear"),
        embed_dim=int(meta["embed_dim"]),
        temperature=float(meta["temperature"]),
        fusion_mode=str(meta["fusion_mode"]),
        ortho_weights=arrays.get("ortho"),
        frozen=bool(meta["frozen"]),
    )
    contexts = []
    for v in range(meta["n_views"]):
        if meta["siamese"][v]:
            ctx = SiameseContext(
                embedder=nn.mlp_from_arrays(arrays, f"siamese_{v}"),
                sigma=meta["sigmas"][v],
                trained=True,
            )
        else:
            ctx = SiameseContext.identity()
            ctx.sigma = meta["sigmas"][v]
        contexts.append(ctx)
    return model, contexts, meta.get("config", {})
