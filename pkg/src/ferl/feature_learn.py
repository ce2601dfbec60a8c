"""Learning a normalised feature function from feature traces.

The network is trained as a discriminator over state pairs: ordered tuples
from within a trace should rank earlier states higher, equivalence tuples
(trace starts against trace starts, ends against ends) should be
indistinguishable. Relative values shift equivalence logits by a fraction of
the current output range before the comparison.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InvariantViolation, NumericalError
from .kinematics import SUBSPACES
from .nn import AdamState, Mlp, adam_step, backward, forward, init_net, sigmoid
from .traces import START, augment_equiv, build_datasets

log = logging.getLogger(__name__)


@dataclass
class FeatureTrainConfig:
    lam: float = 10.0
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch: int = 32
    equiv_augment: int = 5
    hidden: tuple = (64, 64)

    def __post_init__(self):
        for name in ("lam", "epochs", "lr", "batch", "equiv_augment"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"feature.{name}: must be positive")
        if self.weight_decay < 0:
            raise ConfigError("feature.weight_decay: must be nonnegative")
        self.hidden = tuple(self.hidden)


@dataclass
class FeatureFunction:
    net: Mlp
    subspace: str = "positions"
    norm_min: float = 0.0
    norm_max: float = 1.0
    name: str = "learned"
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def index(self):
        return SUBSPACES[self.subspace]

    def logits(self, raw):
        """Unnormalised network output (softplus head, so >= 0)."""
        raw = np.asarray(raw, dtype=float)
        x = raw[..., self.index]
        lead = x.shape[:-1]
        y, _ = forward(self.net, x.reshape(-1, x.shape[-1]))
        return y[:, 0].reshape(lead)

    def __call__(self, raw):
        rng_ = self.norm_max - self.norm_min
        return np.clip((self.logits(raw) - self.norm_min) / rng_, 0.0, 1.0)

    def value_and_grad(self, raw):
        raw = np.asarray(raw, dtype=float)
        x = raw[..., self.index]
        lead = x.shape[:-1]
        flat = x.reshape(-1, x.shape[-1])
        y, cache = forward(self.net, flat)
        rng_ = self.norm_max - self.norm_min
        u = (y[:, 0] - self.norm_min) / rng_
        inside = ((u > 0.0) & (u < 1.0)).astype(float)
        _, dx = backward(self.net, cache, (inside / rng_)[:, None])
        grad = np.zeros(lead + (raw.shape[-1],))
        grad[..., self.index] = dx.reshape(lead + (-1,))
        return np.clip(u, 0.0, 1.0).reshape(lead), grad

    def to_dict(self):
        return {
            "type": "learned",
            "name": self.name,
            "subspace": self.subspace,
            "norm_min": self.norm_min,
            "norm_max": self.norm_max,
            "net": self.net.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["net"]), d["subspace"], d["norm_min"], d["norm_max"], d.get("name", "learned"))


def _log_sigmoid(d):
    return -np.logaddexp(0.0, -d)


def pref_prob(phi, s, s2):
    """P(s > s') from unnormalised logits, numerically stable for large gaps."""
    return sigmoid(phi.logits(s) - phi.logits(s2))


def ord_terms(a, b):
    """Per-pair -log P(a > b) and its derivative w.r.t. the gap a - b."""
    d = a - b
    return -_log_sigmoid(d), -sigmoid(-d)


def equiv_terms(a, b):
    """Per-pair -log P(a > b) - log P(b > a) and its derivative w.r.t. a - b."""
    d = a - b
    return -_log_sigmoid(d) - _log_sigmoid(-d), np.tanh(0.5 * d)


def loss_ord(phi, pairs):
    """Ordered-tuple NLL; ``pairs`` has shape (B, 2, 36)."""
    pairs = np.asarray(pairs, dtype=float)
    if len(pairs) == 0:
        raise ConfigError("empty batch")
    return float(ord_terms(phi.logits(pairs[:, 0]), phi.logits(pairs[:, 1]))[0].sum())


def loss_equiv(phi, pairs, tags=None, rel=None, value_range=None):
    """Equivalence-tuple NLL, optionally with relative-value adjustment."""
    pairs = np.asarray(pairs, dtype=float)
    if len(pairs) == 0:
        raise ConfigError("empty batch")
    a, b = phi.logits(pairs[:, 0]), phi.logits(pairs[:, 1])
    if tags is not None:
        a = adjust_for_relative_values(a, tags, rel[:, 0], value_range)
        b = adjust_for_relative_values(b, tags, rel[:, 1], value_range)
    return float(equiv_terms(a, b)[0].sum())


def adjust_for_relative_values(values, tag, rel, value_range):
    """Shift logits so a partial start/end compares like a full one.

    Start members move up by (1 - v0) * range, end members down by vn * range.
    ``tag`` is "start_pair"/"end_pair" or an array of START/END codes.
    """
    values = np.asarray(values, dtype=float)
    if isinstance(tag, str):
        if tag not in ("start_pair", "end_pair"):
            raise ConfigError(f"unknown tuple tag {tag!r}")
        tag = START if tag == "start_pair" else 1
    rel = np.asarray(rel, dtype=float)
    shift = np.where(np.asarray(tag) == START, (1.0 - rel) * value_range, -rel * value_range)
    return values + shift


def _extrema(net, X):
    y = forward(net, X)[0][:, 0]
    return float(y.min()), float(y.max())


def _batch_loss_grad(net, X, ds, ids, n_ord, lam, value_range):
    """Total loss of one mixed batch and its parameter gradients."""
    is_ord = ids < n_ord
    o = ids[is_ord]
    e = ids[~is_ord] - n_ord
    left = np.concatenate([ds.ordered[o, 0], ds.equiv[e, 0]])
    right = np.concatenate([ds.ordered[o, 1], ds.equiv[e, 1]])
    y, cache = forward(net, X[np.concatenate([left, right])])
    y = y[:, 0]
    B = len(left)
    a, b = y[:B], y[B:]
    no = len(o)
    l_ord, g_ord = ord_terms(a[:no], b[:no])
    tags = ds.equiv_tag[e]
    rel = ds.equiv_rel[e]
    ea = adjust_for_relative_values(a[no:], tags, rel[:, 0], value_range)
    eb = adjust_for_relative_values(b[no:], tags, rel[:, 1], value_range)
    l_eq, g_eq = equiv_terms(ea, eb)
    gd = np.concatenate([g_ord, lam * g_eq])
    dy = np.concatenate([gd, -gd])[:, None]
    grads, _ = backward(net, cache, dy)
    return float(l_ord.sum()), float(l_eq.sum()), grads


def total_loss(net, X, ds, lam, value_range):
    """L_ord + lam * L_equiv over a whole dataset (no gradients)."""
    y = forward(net, X)[0][:, 0]
    l_ord = ord_terms(y[ds.ordered[:, 0]], y[ds.ordered[:, 1]])[0].sum()
    if len(ds.equiv):
        ea = adjust_for_relative_values(y[ds.equiv[:, 0]], ds.equiv_tag, ds.equiv_rel[:, 0], value_range)
        eb = adjust_for_relative_values(y[ds.equiv[:, 1]], ds.equiv_tag, ds.equiv_rel[:, 1], value_range)
        l_eq = equiv_terms(ea, eb)[0].sum()
    else:
        l_eq = 0.0
    return float(l_ord), float(l_eq), float(l_ord + lam * l_eq)


def train_feature(traces, cfg: FeatureTrainConfig | None = None, seed=0, subspace="positions",
                  name="learned", epochs=None) -> FeatureFunction:
    """Train a feature network on traces; returns it normalised by the final-epoch extrema."""
    cfg = cfg or FeatureTrainConfig()
    if not traces:
        raise ConfigError("need at least one trace")
    if len(traces) < 2:
        log.warning("a single trace gives no equivalence tuples")
    ds = augment_equiv(build_datasets(traces), cfg.equiv_augment)
    return fit_dataset(ds, cfg, seed, subspace, name, epochs)


def fit_dataset(ds, cfg: FeatureTrainConfig | None = None, seed=0, subspace="positions",
                name="learned", epochs=None) -> FeatureFunction:
    """The training loop of ``train_feature`` on an already built (augmented) dataset."""
    cfg = cfg or FeatureTrainConfig()
    if subspace not in SUBSPACES:
        raise ConfigError(f"unknown subspace {subspace!r}")
    epochs = cfg.epochs if epochs is None else epochs
    idx = SUBSPACES[subspace]
    X = ds.states[:, idx]
    rng = np.random.default_rng(seed)
    net = init_net([len(idx), *cfg.hidden, 1], "leaky_relu", "softplus", seed=int(rng.integers(2**31)))
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    lo, hi = _extrema(net, X)
    n_ord, n_eq = len(ds.ordered), len(ds.equiv)
    history = []
    params = net.params
    for epoch in range(epochs):
        value_range = hi - lo
        perm = rng.permutation(n_ord + n_eq)
        ep_ord = ep_eq = 0.0
        for start in range(0, len(perm), cfg.batch):
            ids = perm[start:start + cfg.batch]
            l_o, l_e, grads = _batch_loss_grad(net, X, ds, ids, n_ord, cfg.lam, value_range)
            ep_ord += l_o
            ep_eq += l_e
            adam_step(params, grads, opt)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise NumericalError("feature training diverged")
        lo, hi = _extrema(net, X)
        history.append((epoch, ep_ord, ep_eq, ep_ord + cfg.lam * ep_eq))
    if not hi > lo:
        raise InvariantViolation("trained feature is constant on its training states")
    return FeatureFunction(net, subspace, lo, hi, name, history)


def split_ordered(ds, frac, seed):
    """Withhold a fraction of the ordered tuples. Returns (training dataset, held-out index pairs)."""
    if not 0.0 < frac < 1.0:
        raise ConfigError("holdout fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds.ordered))
    n_held = int(round(frac * len(perm)))
    return replace(ds, ordered=ds.ordered[np.sort(perm[n_held:])]), ds.ordered[np.sort(perm[:n_held])]


def select_subspace(traces, seed=0, cfg: FeatureTrainConfig | None = None, epochs=10,
                    candidates=("positions", "orientation")) -> str:
    """Pick the input block whose network generalises best from half the traces to the rest."""
    cfg = cfg or FeatureTrainConfig()
    if len(traces) < 2:
        raise ConfigError("subspace selection needs at least two traces")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(traces))
    half = len(traces) // 2
    train = [traces[i] for i in order[:half]]
    held = [traces[i] for i in order[half:]]
    val_ds = build_datasets(held)
    best, best_loss = None, np.inf
    for k, sub in enumerate(candidates):
        phi = train_feature(train, cfg, seed=seed * 1000 + k, subspace=sub, epochs=epochs)
        value_range = phi.norm_max - phi.norm_min
        loss = total_loss(phi.net, val_ds.states[:, phi.index], val_ds, cfg.lam, value_range)[2]
        if loss < best_loss:
            best, best_loss = sub, loss
    return best


def order_accuracy(phi, traces) -> float:
    """Fraction of within-trace ordered pairs whose logits are strictly ordered."""
    ds = build_datasets(traces)
    return pair_accuracy(phi, ds.states, ds.ordered)


def pair_accuracy(phi, states, pairs) -> float:
    y = phi.logits(states)
    return float(np.mean(y[pairs[:, 0]] > y[pairs[:, 1]]))


def random_feature(dims_in, subspace, seed, hidden=(64, 64)) -> FeatureFunction:
    net = init_net([dims_in, *hidden, 1], "leaky_relu", "softplus", seed=seed)
    return FeatureFunction(net, subspace, 0.0, 1.0, "random")


def normalize_minmax(values):
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if not hi > lo:
        raise InvariantViolation("constant field cannot be min-max normalised")
    return (values - lo) / (hi - lo)


def mse_norm(phi, gt, test_states, seed=0, n_random=10) -> float:
    """MSE of a learned feature to min-max normalised GT, relative to untrained nets."""
    test_states = np.asarray(test_states, dtype=float)
    if len(test_states) == 0:
        raise ConfigError("empty test set")
    target = normalize_minmax(gt(test_states))
    mse = float(np.mean((phi(test_states) - target) ** 2))
    rng = np.random.default_rng(seed)
    idx = SUBSPACES[phi.subspace]
    hidden = tuple(phi.net.dims[1:-1])
    base = []
    for _ in range(n_random):
        r = random_feature(len(idx), phi.subspace, int(rng.integers(2**31)), hidden)
        base.append(np.mean((normalize_minmax(r.logits(test_states)) - target) ** 2))
    return mse / float(np.mean(base))
