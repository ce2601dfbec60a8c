"""Deep and shallow ME-IRL baselines that learn a state cost directly from raw states.

Deep: a ReLU body maps the input block to one neuron; a final linear layer
combines it with any known features and a softplus makes the cost
nonnegative. Shallow: frozen random networks as features with linear IRL
weights on top.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvariantViolation, NumericalError
from .feature_learn import FeatureFunction
from .kinematics import SUBSPACES
from .nn import AdamState, Mlp, adam_step, backward, forward, init_net, sigmoid, softplus
from .reward_offline import DemoSet, IrlConfig, maxent_irl
from .traj import TrajConfig, optimize_traj

log = logging.getLogger(__name__)


@dataclass
class MeirlConfig:
    iterations: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-3
    hidden: tuple = (128, 128)
    subspace: str = "positions"
    traj: TrajConfig = field(default_factory=TrajConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("meirl.iterations: must be >= 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("meirl.lr must be positive and meirl.weight_decay nonnegative")
        if self.subspace not in SUBSPACES:
            raise ConfigError(f"meirl.subspace: unknown {self.subspace!r}")
        self.hidden = tuple(self.hidden)
        if isinstance(self.traj, dict):
            self.traj = TrajConfig(**self.traj)


class DeepReward:
    """cost(s) = softplus(w . [body(s), known(s)] + b)."""

    def __init__(self, body: Mlp, head_w, head_b=0.0, known_features=(), subspace="positions"):
        self.body = body
        self.known = list(known_features)
        self.head_w = np.asarray(head_w, dtype=float)
        self.head_b = np.array(float(head_b))
        self.subspace = subspace
        if self.head_w.shape != (1 + len(self.known),):
            raise ConfigError(f"head has {self.head_w.shape[0]} inputs, expected {1 + len(self.known)}")

    @classmethod
    def init(cls, dims_in, hidden=(128, 128), known_features=(), subspace="positions", seed=0):
        rng = np.random.default_rng(seed)
        body = init_net([dims_in, *hidden, 1], "relu", "linear", seed=int(rng.integers(2**31)))
        w = np.ones(1 + len(known_features))
        return cls(body, w, 0.0, known_features, subspace)

    @property
    def index(self):
        return SUBSPACES[self.subspace]

    @property
    def params(self):
        return self.body.params + [self.head_w, self.head_b]

    def _parts(self, raw, need_grad=False):
        lead = raw.shape[:-1]
        x = raw[..., self.index].reshape(-1, len(self.index))
        h, cache = forward(self.body, x)
        cols = [h[:, 0]]
        kgrads = []
        for f in self.known:
            if need_grad:
                v, g = f.value_and_grad(raw)
                kgrads.append(g.reshape(-1, raw.shape[-1]))
            else:
                v = f(raw)
            cols.append(np.ravel(v))
        H = np.stack(cols, axis=-1)
        z = H @ self.head_w + self.head_b
        return lead, x, cache, H, z, kgrads

    def __call__(self, raw):
        raw = np.asarray(raw, dtype=float)
        lead, _, _, _, z, _ = self._parts(raw)
        return softplus(z).reshape(lead)

    value = __call__

    def value_and_grad(self, raw):
        raw = np.asarray(raw, dtype=float)
        lead, x, cache, H, z, kgrads = self._parts(raw, need_grad=True)
        sz = sigmoid(z)
        _, dx = backward(self.body, cache, (sz * self.head_w[0])[:, None])
        grad = np.zeros((len(z), raw.shape[-1]))
        grad[:, self.index] = dx
        for j, g in enumerate(kgrads):
            grad += (sz * self.head_w[j + 1])[:, None] * g
        return softplus(z).reshape(lead), grad.reshape(lead + (raw.shape[-1],))

    def param_grad(self, raw, dc):
        """Gradient of sum(dc * cost(raw)) w.r.t. ``params``."""
        raw = np.asarray(raw, dtype=float)
        _, _, cache, H, z, _ = self._parts(raw)
        dz = np.ravel(dc) * sigmoid(z)
        body_grads, _ = backward(self.body, cache, (dz * self.head_w[0])[:, None])
        return body_grads + [H.T @ dz, np.array(dz.sum())]

    def to_dict(self):
        return {
            "type": "deep_meirl",
            "subspace": self.subspace,
            "body": self.body.to_dict(),
            "head_w": self.head_w.tolist(),
            "head_b": float(self.head_b),
            "known": [f.to_dict() for f in self.known],
        }

    @classmethod
    def from_dict(cls, d, known_features=None):
        known = known_features if known_features is not None else [
            FeatureFunction.from_dict(k) for k in d.get("known", [])]
        return cls(Mlp.from_dict(d["body"]), d["head_w"], d["head_b"], known, d["subspace"])


def meirl_gradient(reward: DeepReward, demo_raw, sample_raw):
    """d/d params of [mean_demos sum_t cost - mean_samples sum_t cost].

    ``demo_raw``/``sample_raw`` are (n_traj, W, 36) raw-state arrays.
    """
    demo_raw = np.asarray(demo_raw, dtype=float)
    sample_raw = np.asarray(sample_raw, dtype=float)
    if len(demo_raw) == 0 or len(sample_raw) == 0:
        raise ConfigError("meirl_gradient needs demos and samples")
    if demo_raw.shape[-1] != sample_raw.shape[-1]:
        raise ConfigError("demo and sample states differ in dimension")
    both = np.concatenate([demo_raw.reshape(-1, demo_raw.shape[-1]), sample_raw.reshape(-1, sample_raw.shape[-1])])
    dc = np.concatenate([
        np.full(demo_raw.shape[:-1], 1.0 / len(demo_raw)).ravel(),
        np.full(sample_raw.shape[:-1], -1.0 / len(sample_raw)).ravel(),
    ])
    return reward.param_grad(both, dc)


def train_meirl(demos: DemoSet, chain, scene, cfg: MeirlConfig | None = None, seed=0, known_features=()):
    """Deep ME-IRL. Each iteration replans all demo start/goal pairs under the
    current cost, then takes one Adam step per pair in random order."""
    from .kinematics import raw_state

    cfg = cfg or MeirlConfig()
    if len(demos) == 0:
        raise ConfigError("need at least one demonstration")
    rng = np.random.default_rng(seed)
    reward = DeepReward.init(len(SUBSPACES[cfg.subspace]), cfg.hidden, known_features, cfg.subspace,
                             seed=int(rng.integers(2**31)))
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    demo_raw = raw_state(chain, np.stack([d.waypoints for d in demos.demonstrations]), scene)
    history = []
    for it in range(cfg.iterations):
        samples = optimize_traj(reward, demos.starts, demos.goals, chain, scene, cfg.traj)
        sample_raw = raw_state(chain, np.stack([s.waypoints for s in samples]), scene)
        gap = float(np.mean(reward(demo_raw).sum(-1) - reward(sample_raw).sum(-1)))
        for j in rng.permutation(len(demos)):
            grads = meirl_gradient(reward, demo_raw[j:j + 1], sample_raw[j:j + 1])
            adam_step(reward.params, grads, opt)
        if not all(np.all(np.isfinite(p)) for p in reward.params):
            raise NumericalError("ME-IRL training diverged")
        history.append((it, gap))
    return reward, history


class RandomFeature:
    """A frozen random network, min-max scaled to [0, 1] over a reference state set."""

    def __init__(self, net: Mlp, subspace, lo, hi, name="random"):
        self.net, self.subspace, self.lo, self.hi, self.name = net, subspace, float(lo), float(hi), name
        if not self.hi > self.lo:
            raise InvariantViolation(f"random feature {name} is constant on the reference states")
        self._w32 = None

    @property
    def index(self):
        return SUBSPACES[self.subspace]

    def __call__(self, raw):
        return self.value_and_grad(raw, need_grad=False)

    def value_and_grad(self, raw, need_grad=True):
        # frozen weights, so evaluate in float32: this is the hot loop of the shallow baseline
        raw = np.asarray(raw, dtype=float)
        lead = raw.shape[:-1]
        if self._w32 is None:
            self._w32 = [(W.astype(np.float32), b.astype(np.float32)) for W, b in zip(self.net.weights, self.net.biases)]
        h = raw[..., self.index].reshape(-1, len(self.index)).astype(np.float32)
        slope = np.float32(self.net.slope)
        zs = []
        for i, (W, b) in enumerate(self._w32):
            z = h @ W + b
            zs.append(z)
            h = np.maximum(z, slope * z) if i < len(self._w32) - 1 else z
        z = zs[-1][:, 0].astype(float)
        y = np.logaddexp(0.0, z) if self.net.output == "softplus" else z
        span = self.hi - self.lo
        v = ((y - self.lo) / span).reshape(lead)
        if not need_grad:
            return v
        g = (sigmoid(z) if self.net.output == "softplus" else np.ones_like(z))[:, None] / span
        g = g.astype(np.float32)
        for i in range(len(self._w32) - 1, -1, -1):
            if i < len(self._w32) - 1:
                g = g * np.where(zs[i] > 0, np.float32(1.0), slope)
            g = g @ self._w32[i][0].T
        out = np.zeros((len(g), raw.shape[-1]))
        out[:, self.index] = g
        return v, out.reshape(lead + (raw.shape[-1],))

    def to_dict(self):
        return {"type": "random", "subspace": self.subspace, "lo": self.lo, "hi": self.hi,
                "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["net"]), d["subspace"], d["lo"], d["hi"])


@dataclass
class ShallowRandomReward:
    features: list
    theta: np.ndarray

    def __call__(self, raw):
        return sum(w * f(raw) for w, f in zip(self.theta, self.features))

    def frozen_params(self):
        return [p.copy() for f in self.features for p in f.net.params]


def random_features(k, reference_states, subspace="positions", hidden=(256, 256), seed=0):
    if k < 1:
        raise ConfigError("shallow baseline needs k >= 1 random features")
    rng = np.random.default_rng(seed)
    idx = SUBSPACES[subspace]
    out = []
    for i in range(k):
        net = init_net([len(idx), *hidden, 1], "leaky_relu", "softplus", seed=int(rng.integers(2**31)))
        # scale with the same float32 evaluation used at planning time
        y = RandomFeature(net, subspace, 0.0, 1.0)(np.asarray(reference_states))
        out.append(RandomFeature(net, subspace, y.min(), y.max(), f"random_{i}"))
    return out


def train_shallow(demos: DemoSet, k, chain, scene, reference_states, cfg: IrlConfig | None = None, seed=0,
                  subspace="positions"):
    """Linear MaxEnt IRL over ``k`` frozen random features."""
    feats = random_features(k, reference_states, subspace, seed=seed)
    lin, history = maxent_irl(feats, demos, chain, scene, cfg, seed)
    return ShallowRandomReward(feats, lin.theta), history
