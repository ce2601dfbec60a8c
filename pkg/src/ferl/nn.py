"""A small dense-network engine: batched forward/backward passes and Adam.

Weights are stored as ``W`` of shape (fan_in, fan_out) so a batch ``X`` of
shape (B, fan_in) maps through ``X @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

HIDDEN_ACTIVATIONS = ("leaky_relu", "relu")
OUTPUT_ACTIVATIONS = ("softplus", "linear")


@dataclass
class Mlp:
    dims: list
    hidden: str = "leaky_relu"
    output: str = "softplus"
    slope: float = 0.01
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def __post_init__(self):
        if not 0.0 <= self.slope < 1.0:
            raise ConfigError(f"leaky slope must lie in [0, 1), got {self.slope}")

    def copy(self):
        return Mlp(list(self.dims), self.hidden, self.output, self.slope,
                   [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x):
        return forward(self, x)[0]

    def to_dict(self):
        return {
            "dims": list(self.dims),
            "hidden": self.hidden,
            "output": self.output,
            "slope": self.slope,
            "params": [p.ravel().tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        dims = d["dims"]
        flat = d["params"]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            weights.append(np.array(flat[2 * i], dtype=float).reshape(dims[i], dims[i + 1]))
            biases.append(np.array(flat[2 * i + 1], dtype=float))
        return cls(list(dims), d["hidden"], d["output"], d["slope"], weights, biases)


def init_net(dims, hidden="leaky_relu", output="softplus", seed=0, slope=0.01) -> Mlp:
    """He-uniform initialisation: W ~ U(-a, a), a = sqrt(6 / fan_in); zero biases."""
    if len(dims) < 2:
        raise ConfigError("network needs at least input and output dims")
    if hidden not in HIDDEN_ACTIVATIONS or output not in OUTPUT_ACTIVATIONS:
        raise ConfigError(f"unsupported activations {hidden!r}/{output!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(dims), hidden, output, slope, weights, biases)


def _act(net, z):
    if net.hidden == "relu":
        return np.maximum(z, 0.0)
    # equals where(z > 0, z, slope z) for 0 <= slope < 1, and is faster
    return np.maximum(z, net.slope * z)


def _dact(net, z):
    if net.hidden == "relu":
        return (z > 0).astype(float)
    return np.where(z > 0, 1.0, net.slope)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(net: Mlp, x):
    """Evaluate on a batch (B, in) or a single input (in,). Returns (y, cache)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None] if single else x
    if h.shape[-1] != net.dims[0]:
        raise ConfigError(f"input dim {h.shape[-1]} != network input {net.dims[0]}")
    hs, zs = [h], []
    n = len(net.weights)
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        zs.append(z)
        if i < n - 1:
            h = _act(net, z)
        else:
            h = softplus(z) if net.output == "softplus" else z
        hs.append(h)
    y = h[0] if single else h
    return y, {"hs": hs, "zs": zs, "single": single}


def backward(net: Mlp, cache, dy):
    """Reverse pass. ``dy`` has the shape of the forward output.

    Returns (parameter gradients in ``net.params`` order, input gradient).
    Parameter gradients are summed over the batch.
    """
    if cache is None:
        raise ConfigError("backward needs the cache of a forward pass")
    hs, zs = cache["hs"], cache["zs"]
    g = np.asarray(dy, dtype=float)
    if cache["single"]:
        g = g[None]
    n = len(net.weights)
    grads = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        z = zs[i]
        if i == n - 1:
            if net.output == "softplus":
                g = g * sigmoid(z)
        else:
            g = g * _dact(net, z)
        grads[2 * i] = hs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    dx = g[0] if cache["single"] else g
    return grads, dx


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None


def adam_step(params, grads, state: AdamState):
    """One Adam update, in place, with decoupled weight decay. Returns ``params``."""
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
