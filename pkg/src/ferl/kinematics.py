"""Forward kinematics for a serial revolute chain and the 36-D raw state.

Raw state layout (fixed, used for subspace indexing and file formats)::

    [ joint xyz (21) | laptop xyz (3) | human xyz (3) | EE rotation (9, row-major) ]

All functions accept either a single configuration ``(dof,)`` or a batch
``(..., dof)`` and broadcast over the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

RAW_DIM = 36
JOINTS = slice(0, 21)
EE_POS = slice(18, 21)
LAPTOP = slice(21, 24)
HUMAN = slice(24, 27)
ROTATION = slice(27, 36)

SUBSPACES = {
    "positions": np.arange(0, 27),
    "orientation": np.arange(27, 36),
    "full": np.arange(0, 36),
    # EE xyz + both object blocks; the small input used for between-objects
    "ee_objects": np.arange(18, 27),
}


def _default_links():
    axes = [(0.0, 0.0, 1.0) if i % 2 == 0 else (0.0, 1.0, 0.0) for i in range(7)]
    return [(np.array(a), np.array([0.0, 0.0, 0.15])) for a in axes]


@dataclass
class KinematicChain:
    """Serial chain of revolute joints.

    Each link is ``(axis, offset)``: the joint rotates about ``axis`` (expressed
    in the parent frame), then the frame translates by ``offset`` in the
    rotated frame. ``base`` is the world position of the first joint.
    """

    links: list = field(default_factory=_default_links)
    base: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.78]))

    def __post_init__(self):
        self.links = [(np.asarray(a, dtype=float), np.asarray(o, dtype=float)) for a, o in self.links]
        self.base = np.asarray(self.base, dtype=float)
        for i, (a, o) in enumerate(self.links):
            if a.shape != (3,) or o.shape != (3,):
                raise ConfigError(f"chain.links[{i}]: axis and offset must be 3-vectors")
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ConfigError(f"chain.links[{i}].axis: not unit norm")
        self._axes = np.stack([a for a, _ in self.links])
        self._offsets = np.stack([o for _, o in self.links])
        # R_i(q) = I cos q + [a]x sin q + a a^T (1 - cos q), flattened: basis (dof, 9, 3)
        A = self._axes
        self._rot_basis = np.stack([
            np.broadcast_to(np.eye(3).ravel(), (len(A), 9)),
            _skew(A).reshape(-1, 9),
            (A[:, :, None] * A[:, None, :]).reshape(-1, 9),
        ], axis=-1)

    @property
    def dof(self) -> int:
        return len(self.links)

    @property
    def reach(self) -> float:
        return float(np.linalg.norm(self._offsets, axis=1).sum())

    def to_dict(self):
        return {
            "links": [{"axis": a.tolist(), "offset": o.tolist()} for a, o in self.links],
            "base": self.base.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        links = [(l["axis"], l["offset"]) for l in d["links"]] if "links" in d else _default_links()
        return cls(links=links, base=d.get("base", [0.0, 0.0, 0.78]))


@dataclass
class FrameSet:
    joint_positions: np.ndarray  # (..., dof, 3)
    ee_rotation: np.ndarray  # (..., 3, 3)
    # world rotation axis and rotation origin of each joint, kept for Jacobians
    axes_world: np.ndarray = None  # (..., dof, 3)
    origins: np.ndarray = None  # (..., dof, 3)


def _skew(a):
    a = np.asarray(a, dtype=float)
    z = np.zeros(a.shape[:-1])
    return np.stack([
        np.stack([z, -a[..., 2], a[..., 1]], -1),
        np.stack([a[..., 2], z, -a[..., 0]], -1),
        np.stack([-a[..., 1], a[..., 0], z], -1),
    ], -2)


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation matrices for a unit axis and angles of any shape.

    ``axis`` may also be a stack of axes (k, 3) matched to the last axis of ``angle``.
    """
    angle = np.asarray(angle, dtype=float)
    a = np.asarray(axis, dtype=float)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    outer = a[..., :, None] * a[..., None, :]
    return c * np.eye(3) + s * _skew(a) + (1.0 - c) * outer


def forward_kinematics(chain: KinematicChain, q) -> FrameSet:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != chain.dof:
        raise ConfigError(f"configuration has {q.shape[-1]} joints, chain has {chain.dof}")
    lead = q.shape[:-1]
    # batch axis last internally: einsum over small matrices is much faster that way
    qt = q.reshape(-1, chain.dof).T  # (dof, n)
    n = qt.shape[1]
    c = np.cos(qt)
    trig = np.stack([c, np.sin(qt), 1.0 - c], axis=1)  # (dof, 3, n)
    rots = np.matmul(chain._rot_basis, trig).reshape(chain.dof, 3, 3, n)
    A = chain._axes
    R = np.broadcast_to(np.eye(3)[:, :, None], (3, 3, n))
    p = np.broadcast_to(chain.base[:, None], (3, n))
    positions = np.empty((chain.dof, 3, n))
    axes_w = np.empty((chain.dof, 3, n))
    origins = np.empty((chain.dof, 3, n))
    for i in range(chain.dof):
        axes_w[i] = np.einsum("ijn,j->in", R, A[i])
        origins[i] = p
        R = np.einsum("ijn,jkn->ikn", R, rots[i])
        p = p + np.einsum("ijn,j->in", R, chain._offsets[i])
        positions[i] = p

    def back(x, tail):
        return np.moveaxis(x, -1, 0).reshape(lead + tail)

    return FrameSet(back(positions, (chain.dof, 3)), back(R, (3, 3)),
                    back(axes_w, (chain.dof, 3)), back(origins, (chain.dof, 3)))


def _frames_to_raw(frames: FrameSet, scene) -> np.ndarray:
    lead = frames.ee_rotation.shape[:-2]
    raw = np.empty(lead + (RAW_DIM,))
    raw[..., JOINTS] = frames.joint_positions.reshape(lead + (-1,))
    raw[..., LAPTOP] = scene.laptop_xyz
    raw[..., HUMAN] = scene.human_xyz
    raw[..., ROTATION] = frames.ee_rotation.reshape(lead + (9,))
    return raw


def raw_state(chain: KinematicChain, q, scene) -> np.ndarray:
    if chain.dof != 7:
        raise ConfigError("raw state layout needs a 7-joint chain")
    return _frames_to_raw(forward_kinematics(chain, q), scene)


def raw_state_vjp(frames: FrameSet, g_raw) -> np.ndarray:
    """Vector-Jacobian product d(raw)/dq^T g for a batch of raw-state gradients.

    Uses d p_j / d q_i = w_i x (p_j - o_i) for j >= i and dR/dq_i = [w_i]x R,
    so every term reduces to w_i . v_i.
    """
    g_raw = np.asarray(g_raw, dtype=float)
    lead = g_raw.shape[:-1]
    dof = frames.joint_positions.shape[-2]
    gp = g_raw[..., JOINTS].reshape(lead + (dof, 3))
    G = g_raw[..., ROTATION].reshape(lead + (3, 3))
    P = frames.joint_positions
    # suffix sums over downstream joints j >= i
    pxg = np.cross(P, gp)
    suf_pxg = np.cumsum(pxg[..., ::-1, :], axis=-2)[..., ::-1, :]
    suf_g = np.cumsum(gp[..., ::-1, :], axis=-2)[..., ::-1, :]
    v = suf_pxg - np.cross(frames.origins, suf_g)
    R = frames.ee_rotation
    rot_term = np.cross(np.swapaxes(R, -1, -2), np.swapaxes(G, -1, -2)).sum(axis=-2)
    v = v + rot_term[..., None, :]
    return np.einsum("...ik,...ik->...i", frames.axes_world, v)


def sample_configs(chain: KinematicChain, count: int, rng) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=(count, chain.dof))


def sample_reachable_states(chain: KinematicChain, scene, count: int, seed: int) -> np.ndarray:
    """Raw states from joint angles drawn uniformly in [-pi, pi]; shape (count, 36)."""
    if count <= 0:
        return np.zeros((0, RAW_DIM))
    rng = np.random.default_rng(seed)
    return raw_state(chain, sample_configs(chain, count, rng), scene)
