"""Feature traces, a simulated teacher that produces them, and tuple datasets."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .envs import GroundTruthFeature, Scene
from .errors import ConfigError
from .kinematics import KinematicChain, forward_kinematics, raw_state, raw_state_vjp, sample_configs

START, END = 0, 1


@dataclass
class FeatureTrace:
    states: np.ndarray  # (n + 1, 36), feature value decreasing along axis 0
    v0: float = 1.0
    vn: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or len(self.states) < 2:
            raise ConfigError("a feature trace needs at least two states")
        if not (0.0 <= self.vn <= self.v0 <= 1.0):
            raise ConfigError(f"relative values must satisfy 0 <= vn <= v0 <= 1, got {self.vn}, {self.v0}")

    def __len__(self):
        return len(self.states)

    def to_dict(self):
        return {"states": self.states.tolist(), "v0": self.v0, "vn": self.vn}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["states"], dtype=float), d.get("v0", 1.0), d.get("vn", 0.0))


def _joint_grad(f, chain, scene, q):
    frames = forward_kinematics(chain, q)
    raw = raw_state(chain, q, scene)
    val, g_raw = f.value_and_grad(raw)
    return float(val), raw_state_vjp(frames, g_raw)


def simulate_trace(f: GroundTruthFeature, chain: KinematicChain, scene: Scene, start, steps=60,
                   noise_scale=0.02, seed=0, target_len=30, max_step=0.25, v0=1.0, vn=0.0,
                   metric=None) -> FeatureTrace:
    """Noisy greedy descent on a GT feature in joint space.

    Each step is the linearised move that would lower the feature by
    ``start_value / target_len`` (capped at ``max_step`` rad), shortened until it
    actually decreases the feature, then perturbed by Gaussian joint noise.
    Noise is not corrected, so noisy traces are only roughly monotone.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    q = np.asarray(start, dtype=float).copy()
    f0, _ = _joint_grad(f, chain, scene, q)
    s0 = raw_state(chain, q, scene)
    if f0 <= 1e-9:
        return FeatureTrace(np.stack([s0, s0]), v0, vn, degenerate=True)
    delta = f0 / target_len
    qs = [q.copy()]
    for _ in range(steps):
        val, g = _joint_grad(f, chain, scene, q)
        mg = g if metric is None else metric * g
        gn2 = float(g @ mg)
        if gn2 < 1e-16:
            break
        dq = -mg * (delta / gn2)
        norm = np.linalg.norm(dq)
        if norm > max_step:
            dq *= max_step / norm
        for _ in range(30):
            new = f(raw_state(chain, q + dq, scene))
            if new < val:
                break
            dq *= 0.5
        else:
            break
        if val - new < 0.3 * delta:
            # progress has stalled, e.g. the EE is already on the table
            break
        q = q + dq + noise_scale * rng.standard_normal(len(q))
        qs.append(q.copy())
        if f(raw_state(chain, q, scene)) <= 1e-3 * f0:
            break
    states = raw_state(chain, np.array(qs), scene)
    if len(states) < 2:
        return FeatureTrace(np.stack([s0, s0]), v0, vn, degenerate=True)
    return FeatureTrace(states, v0, vn)


def _pool(chain, scene, rng, size):
    q = sample_configs(chain, size, rng)
    return q, raw_state(chain, q, scene)


def start_configs(kind: str, chain: KinematicChain, scene: Scene, n: int, rng, pool_size=20000):
    """Teacher start states: high-value states for ``kind`` at varied poses.

    Returns a list of (config, v0). Only between_objects produces v0 < 1, for
    traces that start beside the segment joining the two objects.
    """
    f = GroundTruthFeature(kind, scene)
    picks = []
    for _ in range(20):
        q, raw = _pool(chain, scene, rng, pool_size)
        v = f(raw)
        if kind == "table":
            top = v.max()
            cand = np.flatnonzero(v >= 0.99 * top)
        elif kind == "coffee":
            cand = np.flatnonzero(v >= 1.7)
        elif kind in ("laptop", "test_laptop", "proxemics"):
            cand = np.flatnonzero(v >= 0.85 * f.radius)
        else:
            cand = np.flatnonzero(v >= 0.9 * f.radius)
        picks += [(q[i], 1.0) for i in rng.permutation(cand)]
        if len(picks) >= n:
            break
    if kind == "between_objects":
        # protocol option 2: start beside the segment, labelled with its relative value
        side = _between_side_starts(f, chain, scene, n // 3, rng, pool_size)
        picks = side + picks[: n - len(side)]
        order = rng.permutation(len(picks))
        picks = [picks[i] for i in order]
    if len(picks) < n:
        raise ConfigError(f"could not find {n} start states for feature {kind!r}")
    return picks[:n]


def _between_side_starts(f, chain, scene, n, rng, pool_size):
    from .envs import _segment_dist, _xy_dist

    out = []
    o1 = scene.laptop_xyz
    o2 = scene.alt_object_xyz if scene.alt_object_xyz is not None else scene.human_xyz
    for _ in range(20):
        q, raw = _pool(chain, scene, rng, pool_size)
        ee = raw[:, 18:21]
        seg = 0.8 * _segment_dist(ee[:, :2], o1[:2], o2[:2])
        near = np.minimum(_xy_dist(ee, o1), _xy_dist(ee, o2))
        frac = f(raw) / f.radius
        cand = np.flatnonzero((seg < near) & (frac >= 0.4) & (frac <= 0.95))
        out += [(q[i], float(frac[i])) for i in rng.permutation(cand)]
        if len(out) >= n:
            break
    return out[:n]


def generate_traces(kind: str, chain: KinematicChain, scene: Scene, n: int, seed: int,
                    noise_scale=0.02, steps=60, target_len=30, style=1.5) -> list:
    """A teacher's set of ``n`` traces for one feature.

    Each trace gets its own diagonal joint metric exp(U(-style, style)) so that
    different traces move the arm in different ways (``style=0`` disables this).

    For ``test_laptop`` every trace uses its own laptop placement so that the
    learner sees the laptop move; the held-out test placement is never used.
    """
    rng = np.random.default_rng(seed)
    traces = []
    if kind == "test_laptop":
        for i in range(n):
            sc = scene.with_laptop(_training_laptop_position(scene, rng))
            f = GroundTruthFeature("laptop", sc)
            for q0, v0 in start_configs("laptop", chain, sc, 3, rng):
                tr = simulate_trace(f, chain, sc, q0, steps, noise_scale, int(rng.integers(2**31)),
                                    target_len, v0=v0, metric=_style(rng, chain, style))
                if _completed(f, tr):
                    traces.append(tr)
                    break
            else:
                raise ConfigError("teacher could not complete a test_laptop trace")
        return traces
    f = GroundTruthFeature(kind, scene)
    for q0, v0 in start_configs(kind, chain, scene, 3 * n, rng):
        tr = simulate_trace(f, chain, scene, q0, steps, noise_scale, int(rng.integers(2**31)),
                            target_len, v0=v0, metric=_style(rng, chain, style))
        if _completed(f, tr):
            traces.append(tr)
        if len(traces) == n:
            return traces
    raise ConfigError(f"teacher could not complete {n} traces for feature {kind!r}")


def _style(rng, chain, spread):
    return np.exp(rng.uniform(-spread, spread, chain.dof))


def _completed(f, tr, frac=0.1):
    # a teacher discards traces that stalled well above the feature minimum
    return not tr.degenerate and f(tr.states[-1]) <= frac * f(tr.states[0])


def _training_laptop_position(scene, rng):
    while True:
        r = rng.uniform(0.2, 0.6)
        a = rng.uniform(-np.pi, np.pi)
        xy = np.array([r * np.cos(a), r * np.sin(a)])
        if scene.test_laptop_xyz is None or np.linalg.norm(xy - scene.test_laptop_xyz[:2]) > 0.2:
            return np.array([xy[0], xy[1], scene.laptop_xyz[2]])


@dataclass
class TupleDataset:
    """Ordered and equivalence tuples, stored as index pairs into ``states``.

    ``equiv_tag`` is START or END per equivalence pair and ``equiv_rel`` holds
    the relative value (v0 for starts, vn for ends) of each pair member.
    """

    states: np.ndarray
    ordered: np.ndarray  # (K, 2) int
    equiv: np.ndarray  # (E, 2) int
    equiv_tag: np.ndarray  # (E,) int
    equiv_rel: np.ndarray  # (E, 2) float

    @property
    def ordered_pairs(self):
        return [(self.states[i], self.states[j]) for i, j in self.ordered]

    @property
    def equiv_pairs(self):
        return [(self.states[i], self.states[j], "start_pair" if t == START else "end_pair")
                for (i, j), t in zip(self.equiv, self.equiv_tag)]


def build_datasets(traces) -> TupleDataset:
    if not traces:
        raise ConfigError("need at least one trace")
    states, ordered = [], []
    starts, ends = [], []
    offset = 0
    for tr in traces:
        m = len(tr.states)
        states.append(tr.states)
        i, j = np.triu_indices(m, k=1)
        ordered.append(np.stack([i + offset, j + offset], axis=1))
        starts.append(offset)
        ends.append(offset + m - 1)
        offset += m
    equiv, tags, rel = [], [], []
    for a in range(len(traces)):
        for b in range(a):
            equiv.append((starts[a], starts[b]))
            tags.append(START)
            rel.append((traces[a].v0, traces[b].v0))
            equiv.append((ends[a], ends[b]))
            tags.append(END)
            rel.append((traces[a].vn, traces[b].vn))
    return TupleDataset(
        np.concatenate(states),
        np.concatenate(ordered).astype(int),
        np.array(equiv, dtype=int).reshape(-1, 2),
        np.array(tags, dtype=int),
        np.array(rel, dtype=float).reshape(-1, 2),
    )


def augment_equiv(ds: TupleDataset, factor=5) -> TupleDataset:
    if factor < 1:
        raise ConfigError("augmentation factor must be >= 1")
    return replace(
        ds,
        equiv=np.repeat(ds.equiv, factor, axis=0),
        equiv_tag=np.repeat(ds.equiv_tag, factor),
        equiv_rel=np.repeat(ds.equiv_rel, factor, axis=0),
    )
