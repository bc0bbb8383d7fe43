"""Minimal dense feed-forward network with manual backprop and Adam.

Everything is float64 numpy. A network is a list of (weights, bias) pairs with
ReLU or tanh on hidden layers and an identity output layer. Gradients are
computed by explicit reverse-mode passes; there is no autodiff graph.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerError

ACTIVATIONS = ("relu", "tanh")


@dataclass
class Mlp:
    """Dense feed-forward net. ``layer_dims`` chains input -> hidden... -> output."""

    layer_dims: list
    weights: list
    biases: list
    activation: str = "relu"
    init_seed: int = 0

    @classmethod
    def init(cls, layer_dims, activation="relu", seed=0):
        """He-style uniform fan-in init, zero biases, deterministic per seed."""
        if len(layer_dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if any(d < 1 for d in layer_dims):
            raise ValueError("layer dimensions must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = np.sqrt(6.0 / d_in)
            weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(list(layer_dims), weights, biases, activation, seed)

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live objects."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        return Mlp(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.init_seed,
        )


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def forward(net, batch):
    """Run the net on a (m, d_in) batch.

    Returns ``(output, cache)`` where the cache holds per-layer inputs and
    pre-activations for :func:`backward`.
    """
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.in_dim:
        raise ValueError(
            f"batch shape {a.shape} does not match input dim {net.in_dim}"
        )
    n_layers = len(net.weights)
    cache = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        cache.append((a, z))
        a = _act(z, net.activation) if i < n_layers - 1 else z
    return a, cache


def backward(net, cache, output_grad):
    """Exact reverse-mode gradients of :func:`forward`.

    Returns ``(grads, input_grad)`` with grads ordered like ``parameters()``.
    """
    if len(cache) != len(net.weights):
        raise ValueError("cache does not match network depth")
    g = np.asarray(output_grad, dtype=np.float64)
    n_layers = len(net.weights)
    grads = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        a_in, z = cache[i]
        if i < n_layers - 1:
            g = g * _act_grad(z, net.activation)
        grads[2 * i] = a_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, g


@dataclass
class AdamState:
    """Per-network Adam accumulators; ``lr`` is mutated by the LR policy.

    ``weight_decay`` is decoupled (applied directly to the parameters, not
    through the moments); at the default 0 this is the standard update.
    """

    m: list
    v: list
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_net(cls, net, lr, weight_decay=0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        params = net.parameters()
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
            lr=lr,
            weight_decay=weight_decay,
        )


def adam_step(state, params, grads):
    """Standard bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient count does not match state")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise OptimizerError("non-finite gradient passed to adam_step")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p


@dataclass
class LrPolicy:
    """Plateau decay: multiply by ``decay_factor`` after ``patience_epochs``
    epochs without validation improvement; stop below ``floor_lr``."""

    initial_lr: float = 1e-3
    decay_factor: float = 0.1
    patience_epochs: int = 10
    floor_lr: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must be in (0, 1)")
        if self.floor_lr >= self.initial_lr:
            raise ValueError("floor_lr must be below initial_lr")


def lr_schedule(policy, val_loss_history):
    """Replay the decay policy over a validation-loss history.

    Pure function of the history: returns ``(lr, action)`` with action
    ``"continue"`` or ``"stop"``. The non-improvement counter resets after
    each decay, so prolonged plateaus decay repeatedly.
    """
    if len(val_loss_history) == 0:
        raise ValueError("history must be non-empty")
    lr = policy.initial_lr
    best = np.inf
    since_improve = 0
    for loss in val_loss_history:
        if loss < best:
            best = loss
            since_improve = 0
        else:
            since_improve += 1
        if since_improve >= policy.patience_epochs:
            lr *= policy.decay_factor
            since_improve = 0
            if lr < policy.floor_lr:
                return lr, "stop"
    return lr, "continue"


def lr_epoch_update(policy, states, val_loss_history):
    """Apply :func:`lr_schedule` to a collection of Adam states.

    Returns ``"continue"`` or ``"stop"``; the states' learning rates are set
    to the scheduled value either way.
    """
    lr, action = lr_schedule(policy, val_loss_history)
    for st in states:
        st.lr = lr
    return action


# ---------------------------------------------------------------------------
# persistence
#
# Networks are stored in numpy ``.npz`` archives. For a prefix P the archive
# holds ``P.layer_dims`` (int64 vector), ``P.meta`` (activation name and init
# seed as a 2-element string array) and ``P.w{i}`` / ``P.b{i}`` per layer, all
# row-major float64. Several networks can share one archive under different
# prefixes; that is how model checkpoints are laid out.
# ---------------------------------------------------------------------------

def mlp_to_arrays(net, prefix):
    arrays = {
        f"{prefix}.layer_dims": np.asarray(net.layer_dims, dtype=np.int64),
        f"{prefix}.meta": np.array([net.activation, str(net.init_seed)]),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}.w{i}"] = w
        arrays[f"{prefix}.b{i}"] = b
    return arrays


def mlp_from_arrays(arrays, prefix):
    dims = [int(d) for d in arrays[f"{prefix}.layer_dims"]]
    meta = arrays[f"{prefix}.meta"]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        weights.append(np.asarray(arrays[f"{prefix}.w{i}"], dtype=np.float64))
        biases.append(np.asarray(arrays[f"{prefix}.b{i}"], dtype=np.float64))
    return Mlp(dims, weights, biases, str(meta[0]), int(meta[1]))


def save_mlp(path, net):
    np.savez(path, **mlp_to_arrays(net, "net"))


def load_mlp(path):
    with np.load(path, allow_pickle=False) as data:
        return mlp_from_arrays(data, "net")
