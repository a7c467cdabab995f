"""Minimal dense Q-network: forward pass, analytic gradients, first-order updates.

Everything is plain numpy in float64. The network is a stack of affine layers
with rectifier activations on the hidden layers and an identity output, which
is all the Q-function approximator needs here (two hidden layers of 64 units
in the default experiments).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class DenseNet:
    """Fully-connected net. weights[i] has shape (layer_dims[i+1], layer_dims[i])."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "DenseNet":
        return DenseNet(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class GradientSet:
    """Per-parameter gradients, shape-congruent with a DenseNet."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]


@dataclass
class OptimizerState:
    """First-order update rule plus its per-parameter accumulators.

    The default is the RMSprop-style rule from the DQN lineage
    (lr 2.5e-4, decay 0.95, eps 1e-2); "sgd" gives the exact
    new_p = p - lr * g arithmetic used by the deterministic tests.
    """

    rule: str = "rmsprop"
    lr: float = 2.5e-4
    decay: float = 0.95
    eps: float = 1e-2
    acc_weights: list[np.ndarray] = field(default_factory=list)
    acc_biases: list[np.ndarray] = field(default_factory=list)
    # preallocated work buffers; the update runs once per environment step
    scratch: list[np.ndarray] = field(default_factory=list, repr=False)

    @classmethod
    def for_net(cls, net: DenseNet, rule: str = "rmsprop", lr: float = 2.5e-4,
                decay: float = 0.95, eps: float = 1e-2) -> "OptimizerState":
        if rule not in ("rmsprop", "sgd"):
            raise ConfigError(f"unknown optimizer rule: {rule!r}")
        if lr <= 0:
            raise ConfigError("learning rate must be > 0")
        return cls(
            rule=rule, lr=lr, decay=decay, eps=eps,
            acc_weights=[np.zeros_like(w) for w in net.weights],
            acc_biases=[np.zeros_like(b) for b in net.biases],
            scratch=[np.zeros_like(w) for w in net.weights]
            + [np.zeros_like(b) for b in net.biases],
        )


def init_net(layer_dims: list[int], rng: np.random.Generator) -> DenseNet:
    """Build a net with fan-in-scaled uniform weights and zero biases.

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), which keeps
    rectifier pre-activations well scaled at these widths. Deterministic for a
    given generator state.
    """
    if not layer_dims or len(layer_dims) < 2:
        raise ConfigError("layer_dims needs at least an input and an output size")
    if any(int(d) < 1 for d in layer_dims):
        raise ConfigError(f"all layer dims must be >= 1, got {layer_dims}")
    dims = [int(d) for d in layer_dims]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(layer_dims=dims, weights=weights, biases=biases)


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Map one input vector to one Q-value per action (1D output)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.layer_dims[0]:
        raise ShapeError(f"input has shape {x.shape}, net expects ({net.layer_dims[0]},)")
    a = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = w @ a + b
        if i != last:
            a = np.maximum(a, 0.0)
    return a


def forward_batch(net: DenseNet, xs: np.ndarray) -> np.ndarray:
    """Batched forward pass; xs is (B, in), result is (B, out)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"batch has shape {xs.shape}, net expects (B, {net.layer_dims[0]})")
    a = xs
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w.T + b
        if i != last:
            a = np.maximum(a, 0.0)
    return a


def q_loss_and_grad(net: DenseNet, batch_inputs: np.ndarray, actions: np.ndarray,
                    td_targets: np.ndarray, clip_td_error: bool = False):
    """Squared TD error on the selected actions, averaged over the batch.

    loss = mean_i (td_i - Q(x_i)[a_i])^2, with gradients flowing only through
    the selected outputs. With `clip_td_error` the error term is clamped to
    [-1, 1] before squaring (gradient is zero where the clamp is active).

    Returns (loss, GradientSet).
    """
    xs = np.asarray(batch_inputs, dtype=np.float64)
    if xs.ndim != 2:
        xs = np.atleast_2d(xs)
    acts = np.asarray(actions, dtype=np.int64)
    tds = np.asarray(td_targets, dtype=np.float64)
    n = xs.shape[0]
    if n < 1 or acts.shape[0] != n or tds.shape[0] != n:
        raise ShapeError("batch_inputs, actions and td_targets must have equal length >= 1")
    n_actions = net.layer_dims[-1]
    if np.any(acts < 0) or np.any(acts >= n_actions):
        raise IndexError(f"action index out of range [0, {n_actions})")

    # forward, keeping pre-activations for backprop
    last = net.n_layers - 1
    activations = [xs]
    pre = []
    a = xs
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)

    q_sel = a[np.arange(n), acts]
    err = tds - q_sel if not clip_td_error else np.clip(tds - q_sel, -1.0, 1.0)
    loss = float(np.mean(err**2))

    # dL/dQ_selected = -2 * err / n, zero where the clamp saturates
    d_out = np.zeros_like(a)
    d_sel = -2.0 * err / n
    if clip_td_error:
        d_sel = np.where(np.abs(tds - q_sel) < 1.0, d_sel, 0.0)
    d_out[np.arange(n), acts] = d_sel

    d_weights = [None] * net.n_layers
    d_biases = [None] * net.n_layers
    dz = d_out
    for i in range(last, -1, -1):
        d_weights[i] = dz.T @ activations[i]
        d_biases[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ net.weights[i]) * (pre[i - 1] > 0.0)
    return loss, GradientSet(d_weights=d_weights, d_biases=d_biases)


def apply_update(net: DenseNet, grads: GradientSet, opt: OptimizerState) -> None:
    """Move parameters opposite the gradient, in place, per the optimizer rule."""
    if len(grads.d_weights) != net.n_layers or len(grads.d_biases) != net.n_layers:
        raise ShapeError("gradient set is not congruent with the net")
    for dw, db, w, b in zip(grads.d_weights, grads.d_biases, net.weights, net.biases):
        if dw.shape != w.shape or db.shape != b.shape:
            raise ShapeError("gradient set is not congruent with the net")
        # a single nan/inf anywhere poisons the sum, so one reduce suffices
        if not (np.isfinite(dw.sum()) and np.isfinite(db.sum())):
            raise NumericError("non-finite gradient; update rejected")

    if opt.rule == "sgd":
        for w, b, dw, db in zip(net.weights, net.biases, grads.d_weights, grads.d_biases):
            w -= opt.lr * dw
            b -= opt.lr * db
    elif opt.rule == "rmsprop":
        n = net.n_layers
        params = list(zip(net.weights, net.biases))
        grad_pairs = list(zip(grads.d_weights, grads.d_biases))
        acc_pairs = list(zip(opt.acc_weights, opt.acc_biases))
        for i in range(n):
            for j, (p, g, acc) in enumerate(zip(params[i], grad_pairs[i], acc_pairs[i])):
                tmp = opt.scratch[i + j * n] if opt.scratch else np.empty_like(p)
                np.multiply(g, g, out=tmp)
                acc *= opt.decay
                tmp *= 1.0 - opt.decay
                acc += tmp
                np.sqrt(acc, out=tmp)
                tmp += opt.eps
                np.divide(g, tmp, out=tmp)
                tmp *= opt.lr
                p -= tmp
    else:
        raise ConfigError(f"unknown optimizer rule: {opt.rule!r}")


def sync_target(online: DenseNet) -> DenseNet:
    """Deep copy of the online net; later updates to it leave the copy untouched."""
    return online.copy()
