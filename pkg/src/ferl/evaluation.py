"""Reward metrics, the exact enumeration oracle, and seeded experiment sweeps.

All comparisons between a learned model and the GT reward go through min-max
normalisation of per-state (or per-trajectory) costs, so only the shape of a
reward matters, never its scale.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, softmax

from .envs import GroundTruthReward, gt_reward
from .errors import ConfigError, InvariantViolation
from .feature_learn import normalize_minmax
from .kinematics import raw_state
from .reward_offline import LinearReward, boltzmann_logprob
from .reward_meirl import ShallowRandomReward
from .traj import LinearCost, TrajConfig, interpolate, optimize_traj, traj_features

log = logging.getLogger(__name__)


class DegenerateField(InvariantViolation):
    """A model assigns the same cost to every test state."""


def state_cost_fn(model):
    """Per-state cost callable for any reward model in the package."""
    if isinstance(model, (LinearReward, GroundTruthReward)):
        return model.state_cost
    if callable(model):
        return model
    raise ConfigError(f"cannot evaluate model of type {type(model).__name__}")


def planning_cost(model):
    """An object with value/value_and_grad usable by ``optimize_traj``."""
    if isinstance(model, LinearReward):
        return model.cost()
    if isinstance(model, GroundTruthReward):
        return LinearCost(model.features, model.weights)
    if isinstance(model, ShallowRandomReward):
        return LinearCost(model.features, model.theta)
    if hasattr(model, "value_and_grad"):
        return model
    raise ConfigError(f"cannot plan with model of type {type(model).__name__}")


def _normalized(values):
    values = np.asarray(values, dtype=float)
    if not np.ptp(values) > 0:
        raise DegenerateField("constant reward field cannot be normalised")
    return normalize_minmax(values)


def reward_accuracy(model, gt_reward_, test_states) -> float:
    """MSE between min-max normalised model and GT costs over the test states."""
    test_states = np.asarray(test_states, dtype=float)
    if len(test_states) == 0:
        raise ConfigError("empty test set")
    m = _normalized(state_cost_fn(model)(test_states))
    g = _normalized(state_cost_fn(gt_reward_)(test_states))
    return float(np.mean((m - g) ** 2))


def behavior_accuracy(model, gt: GroundTruthReward, starts, goals, chain, scene, traj_cfg=None):
    """GT cost of the model's optimal trajectory over the GT cost of the GT optimum, per pair.

    Pairs whose GT optimum has zero cost (or whose optimisation fails) are
    skipped and logged. Returns an array of ratios.
    """
    starts, goals = np.atleast_2d(starts), np.atleast_2d(goals)
    if len(starts) == 0:
        raise ConfigError("need at least one start/goal pair")
    ref = optimize_traj(planning_cost(gt), starts, goals, chain, scene, traj_cfg)
    mine = optimize_traj(planning_cost(model), starts, goals, chain, scene, traj_cfg)
    c_ref = gt_reward(gt, traj_features(ref, gt.features, chain, scene))
    c_mine = gt_reward(gt, traj_features(mine, gt.features, chain, scene))
    ok = c_ref > 1e-9
    if not ok.all():
        log.warning("skipping %d pairs with zero GT cost", int((~ok).sum()))
    return c_mine[ok] / c_ref[ok]


def fit_beta(test_costs, sample_costs, hi=100.0):
    """Golden-section search for the beta in [0, hi] maximising sum_i log P(test_i).

    ``test_costs`` (n,) and ``sample_costs`` (n, m); each test trajectory is
    scored against its own samples with itself included.
    """
    test_costs = np.asarray(test_costs, dtype=float)
    pools = np.concatenate([test_costs[:, None], np.asarray(sample_costs, dtype=float)], axis=1)

    def nll(beta):
        return -sum(boltzmann_logprob(c, beta, pool) for c, pool in zip(test_costs, pools))

    res = minimize_scalar(nll, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-4})
    beta = float(res.x)
    # the bounded search never evaluates the endpoints exactly
    for b in (0.0, hi):
        if nll(b) < nll(beta):
            beta = b
    return beta, -nll(beta) / len(test_costs)


def test_probability(model, gt: GroundTruthReward, starts, goals, chain, scene, n_samples=100, seed=0,
                     traj_cfg=None, hi=100.0):
    """Mean log-likelihood of GT-optimal trajectories under the model with a fitted beta.

    Each pair gets ``n_samples`` alternative trajectories optimised for random
    nonnegative combinations of the GT features. Model costs are min-max
    normalised within each pair's set. Returns (mean log-likelihood, beta).
    """
    starts, goals = np.atleast_2d(starts), np.atleast_2d(goals)
    rng = np.random.default_rng(seed)
    k = len(gt.features)
    cost_fn = state_cost_fn(model)
    ref = optimize_traj(planning_cost(gt), starts, goals, chain, scene, traj_cfg)
    test_c, sample_c = [], []
    for s, g, r in zip(starts, goals, ref):
        W = rng.uniform(0.0, 1.0, (n_samples, k)) * np.max(np.abs(gt.weights))
        samples = optimize_traj(LinearCost(gt.features, W), np.repeat(s[None], n_samples, 0),
                                np.repeat(g[None], n_samples, 0), chain, scene, traj_cfg)
        Q = np.stack([r.waypoints] + [t.waypoints for t in samples])
        C = cost_fn(raw_state(chain, Q, scene)).sum(axis=-1)
        if not np.ptp(C) > 0:
            raise DegenerateField("model gives every trajectory of a pair the same cost")
        C = normalize_minmax(C)
        test_c.append(C[0])
        sample_c.append(C[1:])
    beta, ll = fit_beta(np.array(test_c), np.array(sample_c), hi)
    return ll, beta


@dataclass
class MetricReport:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size == 0:
            raise ConfigError("empty metric report")

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def median(self):
        return float(np.median(self.values))

    @property
    def std(self):
        return float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0

    @property
    def stderr(self):
        return self.std / np.sqrt(self.values.size)


@dataclass
class EnumeratedTrajectorySpace:
    """All trajectories obtained by offsetting interior waypoints of a straight line on a lattice."""

    waypoints: np.ndarray  # (n, T + 1, dof)
    Phi: np.ndarray  # (n, k)

    def __post_init__(self):
        if len(self.waypoints) == 0:
            raise ConfigError("empty trajectory space")
        if len(self.waypoints) != len(self.Phi):
            raise ConfigError("waypoints and feature sums differ in length")

    def __len__(self):
        return len(self.waypoints)

    @classmethod
    def build(cls, start, goal, features, chain, scene, T=4, joints=(0, 1), offsets=(-0.4, 0.0, 0.4),
              max_size=2000):
        start, goal = np.asarray(start, float), np.asarray(goal, float)
        base = interpolate(start, goal, T)
        per_wp = [np.array(c) for c in itertools.product(offsets, repeat=len(joints))]
        combos = list(itertools.product(range(len(per_wp)), repeat=T - 1))
        if len(combos) > max_size:
            raise ConfigError(f"space would have {len(combos)} trajectories (max {max_size})")
        W = np.repeat(base[None], len(combos), axis=0)
        for i, combo in enumerate(combos):
            for t, j in enumerate(combo):
                W[i, t + 1, list(joints)] += per_wp[j]
        W = np.unique(W.round(12), axis=0)
        return cls(W, traj_features(W, features, chain, scene))


def exact_irl_oracle(space: EnumeratedTrajectorySpace, theta, demo_Phi=None):
    """Exact log-partition log sum exp(-theta^T Phi) and expected Phi over the space.

    With ``demo_Phi`` also returns the exact gradient of the demo negative
    log-likelihood, mean(demo_Phi) - E[Phi]. Returns (log_Z, expected_Phi, grad).
    """
    theta = np.asarray(theta, dtype=float)
    logits = -space.Phi @ theta
    log_z = float(logsumexp(logits))
    expected = softmax(logits) @ space.Phi
    grad = None
    if demo_Phi is not None:
        grad = np.atleast_2d(demo_Phi).mean(axis=0) - expected
    return log_z, expected, grad


def exact_loglik(space: EnumeratedTrajectorySpace, theta, demo_Phi) -> float:
    """Mean exact log P(demo) under P proportional to exp(-theta^T Phi) over the space."""
    log_z, _, _ = exact_irl_oracle(space, theta)
    return float(np.mean(-np.atleast_2d(demo_Phi) @ np.asarray(theta, float) - log_z))


def boltzmann_samples(space: EnumeratedTrajectorySpace, theta, n, rng) -> np.ndarray:
    """Indices of ``n`` trajectories drawn from the exact Boltzmann distribution."""
    p = softmax(-space.Phi @ np.asarray(theta, dtype=float))
    return rng.choice(len(space), size=n, p=p)
