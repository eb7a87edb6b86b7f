"""Dense evidential regressor: parameter vector in, NIG field out.

The trunk is a fully connected stack with softplus hidden activations
(smooth everywhere, so finite-difference gradient checks are meaningful).
The head emits four channels per grid element:

    gamma = tanh(z0)          in [-1, 1]
    nu    = softplus(z1)      > 0
    alpha = 1 + softplus(z2)  > 1
    beta  = softplus(z3)      > 0

Output layout is element-major: the final affine layer produces
4 * n_elements units viewed as (n_elements, 4) row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evidential import EvidentialField

__all__ = ["NetConfig", "EvidentialNet", "init", "forward", "backward", "softplus"]

_HEAD_CHANNELS = 4
# Keep nu/beta strictly positive even when softplus underflows at extreme
# negative preactivations; inactive in any sane regime.
_POSITIVE_FLOOR = 1e-300
# alpha = 1 + softplus(z) must stay strictly above 1 after rounding, so
# its floor has to clear an ulp of 1.0.
_ALPHA_FLOOR = 1e-12


@dataclass(frozen=True)
class NetConfig:
    """Architecture description; the seed fully determines the init."""

    input_dim: int
    hidden_sizes: tuple
    grid_shape: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "grid_shape", tuple(int(g) for g in self.grid_shape))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be nonempty positive integers")
        if not self.grid_shape or any(g < 1 for g in self.grid_shape):
            raise ValueError("grid_shape must be nonempty positive integers")

    @property
    def n_elements(self):
        return int(np.prod(self.grid_shape))

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_sizes, _HEAD_CHANNELS * self.n_elements)


@dataclass
class EvidentialNet:
    """Weights and biases per layer; weights[k] has shape (fan_in, fan_out)."""

    config: NetConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init(config: NetConfig) -> EvidentialNet:
    """Seeded init: fan-in-scaled uniform weights, zero biases.

    Zero biases put fresh-net preactivations near zero, so the head
    starts close to (0, ln 2, 1 + ln 2, ln 2).
    """
    rng = np.random.default_rng(config.seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EvidentialNet(config=config, weights=weights, biases=biases)


def softplus(z):
    """log(1 + exp(z)) in the overflow-safe form."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        single = True
    elif x.ndim == 2:
        single = False
    else:
        raise ValueError("input must be a vector or a batch of vectors")
    if x.shape[1] != net.config.input_dim:
        raise ValueError(
            f"input has length {x.shape[1]}, expected {net.config.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input components must be finite")
    return x, single


def _forward_trace(net, x):
    """Run the trunk, keeping preactivations for backprop."""
    activations = [x]
    preacts = []
    h = x
    n_layers = len(net.weights)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        preacts.append(z)
        h = softplus(z) if k < n_layers - 1 else z
        activations.append(h)
    return preacts, activations


def _head(z_out, batch, grid_shape, n_elements):
    z = z_out.reshape(batch + (n_elements, _HEAD_CHANNELS))
    gamma = np.tanh(z[..., 0])
    nu = np.maximum(softplus(z[..., 1]), _POSITIVE_FLOOR)
    alpha = 1.0 + np.maximum(softplus(z[..., 2]), _ALPHA_FLOOR)
    beta = np.maximum(softplus(z[..., 3]), _POSITIVE_FLOOR)
    out_shape = batch + grid_shape
    return EvidentialField(
        gamma=gamma.reshape(out_shape),
        nu=nu.reshape(out_shape),
        alpha=alpha.reshape(out_shape),
        beta=beta.reshape(out_shape),
    )


def forward(net: EvidentialNet, x) -> EvidentialField:
    """Map parameter vector(s) to an evidential field.

    A single vector yields channels of ``grid_shape``; a batch of B
    vectors yields channels of ``(B,) + grid_shape``.
    """
    x, single = _check_input(net, x)
    _, activations = _forward_trace(net, x)
    z_out = activations[-1]
    cfg = net.config
    batch = () if single else (x.shape[0],)
    if single:
        z_out = z_out[0]
    return _head(z_out, batch, cfg.grid_shape, cfg.n_elements)


def backward(net: EvidentialNet, x, upstream):
    """Exact reverse-mode gradients of the full composition.

    ``upstream`` holds d(loss)/d(gamma, nu, alpha, beta) stacked on a
    trailing axis of size 4, shaped like forward's field channels plus
    that axis. Returns (weight_grads, bias_grads) lists aligned with
    ``net.weights`` / ``net.biases``.
    """
    x, single = _check_input(net, x)
    cfg = net.config
    n_el = cfg.n_elements
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = (() if single else (x.shape[0],)) + cfg.grid_shape + (_HEAD_CHANNELS,)
    if upstream.shape != expected:
        raise ValueError(f"upstream has shape {upstream.shape}, expected {expected}")
    up = upstream.reshape(x.shape[0], n_el, _HEAD_CHANNELS)

    preacts, activations = _forward_trace(net, x)
    z_out = preacts[-1].reshape(x.shape[0], n_el, _HEAD_CHANNELS)

    # Chain through the head activations.
    dz_out = np.empty_like(z_out)
    th = np.tanh(z_out[..., 0])
    dz_out[..., 0] = up[..., 0] * (1.0 - th * th)
    for c in (1, 2, 3):
        dz_out[..., c] = up[..., c] * _sigmoid(z_out[..., c])
    delta = dz_out.reshape(x.shape[0], n_el * _HEAD_CHANNELS)

    weight_grads = [None] * len(net.weights)
    bias_grads = [None] * len(net.biases)
    for k in range(len(net.weights) - 1, -1, -1):
        weight_grads[k] = activations[k].T @ delta
        bias_grads[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k].T) * _sigmoid(preacts[k - 1])
    return weight_grads, bias_grads
