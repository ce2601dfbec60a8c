"""Scenes and the closed-form ground-truth features and rewards."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .kinematics import EE_POS, ROTATION, KinematicChain

FEATURE_KINDS = ("table", "coffee", "laptop", "test_laptop", "proxemics", "between_objects")

# raw-state entries each GT feature reads; object positions come from the scene
_INPUT_DIMS = {"table": (20,), "coffee": (35,)}
_XY_DIMS = (18, 19)


def _vec(x):
    return None if x is None else np.asarray(x, dtype=float)


@dataclass
class Scene:
    table_z: float = 0.0
    laptop_xyz: np.ndarray = field(default_factory=lambda: np.array([0.3, 0.1, 0.0]))
    human_xyz: np.ndarray = field(default_factory=lambda: np.array([-0.2, -0.5, 0.0]))
    alt_object_xyz: np.ndarray | None = None
    test_laptop_xyz: np.ndarray | None = field(default_factory=lambda: np.array([-0.1, 0.45, 0.0]))

    def __post_init__(self):
        self.laptop_xyz = _vec(self.laptop_xyz)
        self.human_xyz = _vec(self.human_xyz)
        self.alt_object_xyz = _vec(self.alt_object_xyz)
        self.test_laptop_xyz = _vec(self.test_laptop_xyz)

    def with_laptop(self, xyz) -> "Scene":
        return replace(self, laptop_xyz=np.asarray(xyz, dtype=float))

    def check_reach(self, chain: KinematicChain):
        for name in ("laptop_xyz", "human_xyz", "alt_object_xyz", "test_laptop_xyz"):
            v = getattr(self, name)
            if v is not None and np.linalg.norm(v[:2] - chain.base[:2]) > chain.reach:
                raise ConfigError(f"scene.{name}: outside chain reach")

    def to_dict(self):
        out = {"table_z": self.table_z}
        for name in ("laptop_xyz", "human_xyz", "alt_object_xyz", "test_laptop_xyz"):
            v = getattr(self, name)
            out[name] = None if v is None else v.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _xy_dist(ee, obj):
    return np.linalg.norm(ee[..., :2] - obj[:2], axis=-1)


def _segment_dist(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


@dataclass
class GroundTruthFeature:
    """A closed-form feature bound to a scene.

    ``scale`` multiplies the raw value; tasks use scales that map the feature
    range over the reachable set onto [0, 1].
    """

    kind: str
    scene: Scene = field(default_factory=Scene)
    scale: float = 1.0
    radius: float | None = None
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.radius is None:
            self.radius = 0.2 if self.kind == "between_objects" else 0.3
        if self.kind == "test_laptop" and self.scene.test_laptop_xyz is None:
            raise ConfigError("scene.test_laptop_xyz: required by the test_laptop feature")

    @property
    def name(self):
        return self.kind

    def _raw_value(self, raw):
        ee = raw[..., EE_POS]
        s = self.scene
        if self.kind == "table":
            return ee[..., 2] - s.table_z
        if self.kind == "coffee":
            # world-z component of the EE z-axis: R[2, 2]
            return 1.0 - raw[..., ROTATION][..., 8]
        if self.kind == "laptop":
            return np.maximum(self.radius - _xy_dist(ee, s.laptop_xyz), 0.0)
        if self.kind == "test_laptop":
            return np.maximum(self.radius - _xy_dist(ee, s.test_laptop_xyz), 0.0)
        if self.kind == "proxemics":
            h = s.human_xyz
            d = np.sqrt(((ee[..., 1] - h[1]) / 3.0) ** 2 + (ee[..., 0] - h[0]) ** 2)
            return np.maximum(self.radius - d, 0.0)
        o1 = s.laptop_xyz
        o2 = s.alt_object_xyz if s.alt_object_xyz is not None else s.human_xyz
        d = np.minimum.reduce([
            0.8 * _segment_dist(ee[..., :2], o1[:2], o2[:2]),
            _xy_dist(ee, o1),
            _xy_dist(ee, o2),
        ])
        return np.maximum(self.radius - d, 0.0)

    def __call__(self, raw):
        return self.scale * self._raw_value(np.asarray(raw, dtype=float))

    def value_and_grad(self, raw):
        """Values and central finite-difference gradients w.r.t. the raw state."""
        raw = np.asarray(raw, dtype=float)
        vals = self(raw)
        grad = np.zeros_like(raw)
        h = self.fd_step
        for d in _INPUT_DIMS.get(self.kind, _XY_DIMS):
            up = raw.copy()
            dn = raw.copy()
            up[..., d] += h
            dn[..., d] -= h
            grad[..., d] = (self(up) - self(dn)) / (2 * h)
        return vals, grad

    def to_dict(self):
        return {"type": "ground_truth", "kind": self.kind, "scale": self.scale, "radius": self.radius}


def gt_feature_value(f: GroundTruthFeature, state) -> np.ndarray:
    return f(state)


def feature_range(kind: str, chain: KinematicChain, scene: Scene) -> float:
    """Width of a GT feature's value range over the chain's reachable set."""
    if kind == "table":
        return float(chain.base[2] + chain.reach - scene.table_z)
    if kind == "coffee":
        return 2.0
    if kind == "between_objects":
        return 0.2
    return 0.3


def normalized_feature(kind: str, chain: KinematicChain, scene: Scene) -> GroundTruthFeature:
    return GroundTruthFeature(kind, scene, scale=1.0 / feature_range(kind, chain, scene))


@dataclass
class GroundTruthReward:
    features: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.features):
            raise ConfigError("reward weights and features differ in length")

    def state_cost(self, raw):
        return sum(w * f(raw) for w, f in zip(self.weights, self.features))


def gt_reward(reward: GroundTruthReward, Phi) -> float:
    """Cost theta*^T Phi of a trajectory with per-waypoint feature sums Phi."""
    Phi = np.asarray(Phi, dtype=float)
    if Phi.shape[-1] != len(reward.weights):
        raise ConfigError(f"feature sums have dim {Phi.shape[-1]}, reward has {len(reward.weights)}")
    return Phi @ reward.weights


def task_reward(task: str, chain: KinematicChain, scene: Scene) -> tuple[GroundTruthReward, list]:
    """GT reward for a named task plus the list of features that are *known* up front.

    Offline tasks start from an empty feature set; online tasks know two of the three.
    """
    nf = lambda k: normalized_feature(k, chain, scene)
    offline = {
        "one_feature": ["table"],
        "two_features": ["table", "laptop"],
        "three_features": ["table", "laptop", "proxemics"],
    }
    online = {
        "laptop_missing": (["coffee", "table", "laptop"], 2),
        "table_missing": (["coffee", "laptop", "table"], 2),
        "proxemics_missing": (["coffee", "table", "proxemics"], 2),
    }
    if task in offline:
        kinds = offline[task]
        return GroundTruthReward([nf(k) for k in kinds], np.full(len(kinds), 10.0)), []
    if task in online:
        kinds, n_known = online[task]
        feats = [nf(k) for k in kinds]
        return GroundTruthReward(feats, np.array([0.0, 10.0, 10.0])), feats[:n_known]
    raise ConfigError(f"unknown task {task!r}")
