"""Waypoint trajectories, a batched gradient optimizer, and correction deformations.

Trajectory costs are per-waypoint state costs summed over all waypoints plus a
smoothness term ``smooth * sum_t |q_{t+1} - q_t|^2``. Endpoints are fixed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .kinematics import _frames_to_raw, forward_kinematics, raw_state, raw_state_vjp


@dataclass
class Trajectory:
    waypoints: np.ndarray  # (T + 1, dof)

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.waypoints.ndim != 2 or len(self.waypoints) < 3:
            raise ConfigError("a trajectory needs at least 3 waypoints (T >= 2)")
        if not np.all(np.isfinite(self.waypoints)):
            raise ConfigError("trajectory waypoints must be finite")

    @property
    def T(self):
        return len(self.waypoints) - 1

    @property
    def start(self):
        return self.waypoints[0]

    @property
    def goal(self):
        return self.waypoints[-1]

    def to_dict(self):
        return {"waypoints": self.waypoints.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["waypoints"], dtype=float))


@dataclass
class Correction:
    t: int
    a_H: np.ndarray

    def __post_init__(self):
        self.a_H = np.asarray(self.a_H, dtype=float)


@dataclass
class TrajConfig:
    T: int = 20
    iters: int = 200
    step: float = 0.1
    smooth: float = 1.0
    max_halvings: int = 12
    tol: float = 1e-5  # a problem stops after `patience` steps each improving < tol * |J|
    patience: int = 3

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("traj.T: must be >= 2")
        if self.iters < 0:
            raise ConfigError("traj.iters: must be >= 0")
        if self.step <= 0:
            raise ConfigError("traj.step: must be positive")
        if self.smooth < 0:
            raise ConfigError("traj.smooth: must be nonnegative")
        if self.tol < 0 or self.patience < 1:
            raise ConfigError("traj.tol must be >= 0 and traj.patience >= 1")


class LinearCost:
    """Per-state cost sum_i w_i f_i(s).

    ``weights`` is (k,) or (P, k) for a batch of P problems with their own
    weights; state arrays are then (P, W, 36).
    """

    def __init__(self, features, weights):
        self.features = list(features)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape[-1] != len(self.features):
            raise ConfigError(f"{self.weights.shape[-1]} weights for {len(self.features)} features")

    def _w(self, raw, i):
        w = self.weights[..., i]
        return w if w.ndim == 0 else w.reshape(w.shape + (1,) * (raw.ndim - 2))

    def value(self, raw):
        out = np.zeros(raw.shape[:-1])
        for i, f in enumerate(self.features):
            w = self._w(raw, i)
            if np.any(w != 0):
                out += w * f(raw)
        return out

    def value_and_grad(self, raw):
        out = np.zeros(raw.shape[:-1])
        grad = np.zeros(raw.shape)
        for i, f in enumerate(self.features):
            w = self._w(raw, i)
            if np.any(w != 0):
                v, g = f.value_and_grad(raw)
                out += w * v
                grad += w[..., None] * g if np.ndim(w) else w * g
        return out, grad


def traj_features(traj, features, chain, scene) -> np.ndarray:
    """Per-waypoint feature sums Phi; works on one Trajectory, a list, or a waypoint array."""
    if not features:
        raise ConfigError("need at least one feature")
    Q = _as_array(traj)
    raw = raw_state(chain, Q, scene)
    return np.stack([f(raw).sum(axis=-1) for f in features], axis=-1)


def _as_array(traj):
    if isinstance(traj, Trajectory):
        return traj.waypoints
    if isinstance(traj, (list, tuple)) and traj and isinstance(traj[0], Trajectory):
        return np.stack([t.waypoints for t in traj])
    return np.asarray(traj, dtype=float)


def interpolate(start, goal, T):
    s = np.linspace(0.0, 1.0, T + 1)[:, None]
    return (1.0 - s) * np.asarray(start, dtype=float)[..., None, :] + s * np.asarray(goal, dtype=float)[..., None, :]


def _smooth_cost(Q, smooth):
    return smooth * np.sum(np.diff(Q, axis=-2) ** 2, axis=(-2, -1))


def _smooth_grad(Q, smooth):
    g = np.zeros_like(Q)
    d = np.diff(Q, axis=-2)
    g[..., 1:, :] += 2 * smooth * d
    g[..., :-1, :] -= 2 * smooth * d
    return g


def trajectory_cost(cost, Q, chain, scene, smooth=1.0):
    """Total cost of waypoint array(s) Q of shape (..., T + 1, dof)."""
    Q = _as_array(Q)
    raw = raw_state(chain, Q, scene)
    return cost.value(raw).sum(axis=-1) + _smooth_cost(Q, smooth)


def _value_and_grad(cost, Q, chain, scene, smooth):
    frames = forward_kinematics(chain, Q)
    raw = _frames_to_raw(frames, scene)
    c, g_raw = cost.value_and_grad(raw)
    gq = raw_state_vjp(frames, g_raw) + _smooth_grad(Q, smooth)
    return c.sum(axis=-1) + _smooth_cost(Q, smooth), gq


def optimize_traj(cost, starts, goals, chain, scene, cfg: TrajConfig | None = None,
                  init=None, return_history=False):
    """Minimise per-waypoint cost plus smoothness for a batch of start/goal pairs.

    Normalised gradient descent on interior waypoints: each step moves the
    largest joint by at most ``step`` rad, halving until the cost decreases.
    Only decreasing steps are accepted, so the returned iterate is the best
    one seen. Accepts a single (dof,) start/goal or (P, dof) batches.
    """
    cfg = cfg or TrajConfig()
    starts = np.asarray(starts, dtype=float)
    goals = np.asarray(goals, dtype=float)
    single = starts.ndim == 1
    S, G = np.atleast_2d(starts), np.atleast_2d(goals)
    if S.shape != G.shape:
        raise ConfigError("starts and goals differ in shape")
    Q = interpolate(S, G, cfg.T) if init is None else np.array(_as_array(init), dtype=float).reshape(len(S), cfg.T + 1, -1)
    Q[:, 0], Q[:, -1] = S, G
    J = trajectory_cost(cost, Q, chain, scene, cfg.smooth)
    if not np.all(np.isfinite(J)):
        raise NumericalError("non-finite trajectory cost at initialisation")
    history = [J.copy()]
    step = np.full(len(Q), cfg.step)
    slow = np.zeros(len(Q), dtype=int)
    done = np.all(np.abs(G - S) < 1e-12, axis=-1)
    for _ in range(cfg.iters):
        if done.all():
            break
        act = np.flatnonzero(~done)
        sub_cost = _subset(cost, act)
        Jc, g = _value_and_grad(sub_cost, Q[act], chain, scene, cfg.smooth)
        g[:, 0] = g[:, -1] = 0.0
        gmax = np.abs(g).max(axis=(1, 2))
        flat = gmax < 1e-12
        done[act[flat]] = True
        direction = -g / np.where(flat, 1.0, gmax)[:, None, None]
        s = np.minimum(cfg.step, 2.0 * step[act])
        pending = ~flat
        for _ in range(cfg.max_halvings):
            if not pending.any():
                break
            idx = np.flatnonzero(pending)
            trial = Q[act[idx]] + s[idx, None, None] * direction[idx]
            Jt = trajectory_cost(_subset(sub_cost, idx), trial, chain, scene, cfg.smooth)
            if not np.all(np.isfinite(Jt)):
                raise NumericalError("non-finite trajectory cost during optimisation")
            ok = Jt < Jc[idx]
            small = Jc[idx] - Jt < cfg.tol * np.abs(Jc[idx])
            slow[act[idx[ok]]] = np.where(small[ok], slow[act[idx[ok]]] + 1, 0)
            Q[act[idx[ok]]] = trial[ok]
            J[act[idx[ok]]] = Jt[ok]
            step[act[idx[ok]]] = s[idx[ok]]
            pending[idx[ok]] = False
            s[idx[~ok]] *= 0.5
        done[act[pending]] = True
        done[slow >= cfg.patience] = True
        history.append(J.copy())
    trajs = [Trajectory(q) for q in Q]
    out = trajs[0] if single else trajs
    if return_history:
        return out, np.array(history)
    return out


def _subset(cost, idx):
    if isinstance(cost, LinearCost) and cost.weights.ndim == 2:
        return LinearCost(cost.features, cost.weights[idx])
    if hasattr(cost, "subset"):
        return cost.subset(idx)
    return cost


def acceleration_matrix(n):
    """A = K^T K with K the n x n second-difference stencil [1, -2, 1] (fixed endpoints)."""
    if n < 1:
        raise ConfigError("need at least one interior waypoint")
    K = np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    return K.T @ K


@dataclass
class DeformOperator:
    """Correction propagation tau_H = tau + mu A^-1 a~ over the T - 1 interior waypoints.

    ``A`` is the per-DOF block; the full operator is kron(A, I_dof) in
    waypoint-major order. ``kind="identity"`` uses A = I (tests only).
    """

    T: int = 20
    mu: float = 0.1
    kind: str = "acceleration"

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("deform.T: must be >= 2")
        if self.mu <= 0:
            raise ConfigError("deform.mu: must be positive")
        if self.kind == "acceleration":
            self.A = acceleration_matrix(self.T - 1)
        elif self.kind == "identity":
            self.A = np.eye(self.T - 1)
        else:
            raise ConfigError(f"deform.kind: unknown {self.kind!r}")
        self._chol = np.linalg.cholesky(self.A)

    def full_matrix(self, dof):
        return np.kron(self.A, np.eye(dof))

    def solve(self, E):
        from scipy.linalg import cho_solve

        return cho_solve((self._chol, True), E)


def deform(traj: Trajectory, correction: Correction, op: DeformOperator) -> Trajectory:
    if traj.T != op.T:
        raise ConfigError(f"operator built for T={op.T}, trajectory has T={traj.T}")
    if not 0 < correction.t < traj.T:
        raise ConfigError(f"correction index {correction.t} is not an interior waypoint")
    E = np.zeros((traj.T - 1, traj.waypoints.shape[1]))
    E[correction.t - 1] = correction.a_H
    W = traj.waypoints.copy()
    W[1:-1] += op.mu * op.solve(E)
    return Trajectory(W)
