"""Offline FERL: learned features plus sample-based MaxEnt IRL over linear weights.

Cost convention: C(tau) = theta^T Phi(tau) is minimised by the planner and
P(tau) is proportional to exp(-beta C(tau)). The loss gradient is
mean Phi(demos) - mean Phi(samples) and the update is theta - alpha * grad.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError
from .feature_learn import FeatureTrainConfig, train_feature
from .traj import LinearCost, TrajConfig, Trajectory, optimize_traj, traj_features

log = logging.getLogger(__name__)


@dataclass
class LinearReward:
    features: list
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (len(self.features),):
            raise ConfigError(f"theta has shape {self.theta.shape}, feature set has {len(self.features)} entries")

    def cost(self):
        return LinearCost(self.features, self.theta)

    def state_cost(self, raw):
        return self.cost().value(np.asarray(raw, dtype=float))

    def append(self, feature, weight=0.0):
        return LinearReward(self.features + [feature], np.append(self.theta, weight))


@dataclass
class DemoSet:
    demonstrations: list

    def __post_init__(self):
        self.demonstrations = [d if isinstance(d, Trajectory) else Trajectory(d) for d in self.demonstrations]

    def __len__(self):
        return len(self.demonstrations)

    @property
    def starts(self):
        return np.stack([d.start for d in self.demonstrations])

    @property
    def goals(self):
        return np.stack([d.goal for d in self.demonstrations])

    @property
    def n_states(self):
        return sum(len(d.waypoints) for d in self.demonstrations)

    def to_list(self):
        return [d.to_dict() for d in self.demonstrations]

    @classmethod
    def from_list(cls, items):
        return cls([Trajectory.from_dict(d) for d in items])


@dataclass
class IrlConfig:
    iterations: int = 50
    lr: float = 1.0
    init: str = "zeros"
    # return the mean theta of this final fraction of iterations (0: last iterate)
    tail_average: float = 0.5
    traj: TrajConfig = field(default_factory=TrajConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("irl.iterations: must be >= 0")
        if self.lr <= 0:
            raise ConfigError("irl.lr: must be positive")
        if not 0.0 <= self.tail_average <= 1.0:
            raise ConfigError("irl.tail_average: must lie in [0, 1]")
        if self.init not in ("zeros", "random"):
            raise ConfigError(f"irl.init: unknown {self.init!r}")
        if isinstance(self.traj, dict):
            self.traj = TrajConfig(**self.traj)


def boltzmann_logprob(cost_tau, beta, sample_costs) -> float:
    """log P(tau) = -beta C(tau) - log sum_samples exp(-beta C(sample))."""
    sample_costs = np.asarray(sample_costs, dtype=float)
    if sample_costs.size == 0:
        raise ConfigError("empty sample set")
    return float(-beta * cost_tau - logsumexp(-beta * sample_costs))


def linear_logprob(Phi_tau, theta, beta, Phi_samples) -> float:
    theta = np.asarray(theta, dtype=float)
    return boltzmann_logprob(np.asarray(Phi_tau) @ theta, beta, np.asarray(Phi_samples) @ theta)


def irl_gradient(Phi_demos, Phi_samples) -> np.ndarray:
    Phi_demos = np.atleast_2d(np.asarray(Phi_demos, dtype=float))
    Phi_samples = np.atleast_2d(np.asarray(Phi_samples, dtype=float))
    if len(Phi_demos) == 0 or len(Phi_samples) == 0:
        raise ConfigError("irl_gradient needs demos and samples")
    if Phi_demos.shape[1] != Phi_samples.shape[1]:
        raise ConfigError(f"feature dims differ: {Phi_demos.shape[1]} vs {Phi_samples.shape[1]}")
    return Phi_demos.mean(axis=0) - Phi_samples.mean(axis=0)


def irl_update(theta, grad, lr) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise ConfigError("theta and gradient differ in shape")
    return theta - lr * grad


def maxent_irl(features, demos: DemoSet, chain, scene, cfg: IrlConfig | None = None, seed=0,
               theta0=None):
    """Sample-based MaxEnt IRL over fixed features. Returns (LinearReward, history).

    Each iteration replans every demo start/goal pair under the current theta
    and takes one full-batch gradient step. ``history`` rows are
    (iteration, |grad|, theta...).

    With an exact replanner the iterates often cycle (a weight drops until the
    planner stops avoiding the feature, then jumps back), so the returned theta
    averages the last ``cfg.tail_average`` fraction of iterates.
    """
    cfg = cfg or IrlConfig()
    if len(demos) == 0:
        raise ConfigError("need at least one demonstration")
    k = len(features)
    if theta0 is not None:
        theta = np.asarray(theta0, dtype=float).copy()
    elif cfg.init == "random":
        theta = np.random.default_rng(seed).uniform(0.0, 1.0, k)
    else:
        theta = np.zeros(k)
    Phi_d = traj_features(demos.demonstrations, features, chain, scene)
    history = []
    for it in range(cfg.iterations):
        samples = optimize_traj(LinearCost(features, theta), demos.starts, demos.goals, chain, scene, cfg.traj)
        grad = irl_gradient(Phi_d, traj_features(samples, features, chain, scene))
        theta = irl_update(theta, grad, cfg.lr)
        history.append((it, float(np.linalg.norm(grad)), *theta.tolist()))
        log.debug("irl iter %d |grad| %.4f", it, history[-1][1])
    tail = int(np.ceil(cfg.tail_average * len(history)))
    if tail:
        theta = np.mean([row[2:] for row in history[-tail:]], axis=0)
    return LinearReward(list(features), theta), history


def learn_feature_set(trace_sets, cfg: FeatureTrainConfig | None = None, seed=0, subspaces=None,
                      names=None):
    """Train one feature per trace set."""
    if not trace_sets:
        raise ConfigError("need traces for at least one feature")
    feats = []
    for i, traces in enumerate(trace_sets):
        sub = subspaces[i] if subspaces else "positions"
        name = names[i] if names else f"learned_{i}"
        feats.append(train_feature(traces, cfg, seed=seed * 100 + i, subspace=sub, name=name))
    return feats


def offline_ferl(trace_sets, demos: DemoSet, chain, scene, feature_cfg=None, irl_cfg=None, seed=0,
                 subspaces=None, names=None, known_features=()):
    """Offline FERL: learn each feature from its traces, then MaxEnt IRL on the full set."""
    feats = list(known_features) + learn_feature_set(trace_sets, feature_cfg, seed, subspaces, names)
    reward, history = maxent_irl(feats, demos, chain, scene, irl_cfg, seed)
    return reward, history
