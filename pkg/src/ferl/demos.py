"""Simulated demonstrator: informative start/goal pairs and GT-optimal trajectories."""
from __future__ import annotations

import numpy as np

from .envs import GroundTruthReward
from .errors import ConfigError
from .kinematics import raw_state, sample_configs
from .reward_offline import DemoSet
from .traj import LinearCost, TrajConfig, interpolate, optimize_traj

# per-feature evidence a straight-line path must carry to count as "about" that feature
_MIN_SUM = {"table": 6.0, "coffee": 4.0}
_MIN_SUM_DEFAULT = 2.0


def _focus_groups(reward):
    """Individual features first, then every pair, then all of them."""
    active = [i for i, w in enumerate(reward.weights) if w != 0]
    groups = [(i,) for i in active]
    if len(active) > 1:
        groups += [(a, b) for k, a in enumerate(active) for b in active[k + 1:]]
    if len(active) > 2:
        groups.append(tuple(active))
    return groups


def informative_pairs(reward: GroundTruthReward, chain, scene, n, rng, T=20, pool=256, endpoint_max=None):
    """Start/goal configurations whose straight-line paths exercise the reward's features.

    Pairs cycle through focus groups (each feature alone, pairs, all); a pair
    qualifies for a group when the straight path accumulates enough of every
    feature in it. With ``endpoint_max`` the start and goal must also have
    those features at or below that value, so the interesting part of the
    path is in the middle. Returns (starts, goals), each (n, dof).
    """
    if n < 1:
        raise ConfigError("need at least one start/goal pair")
    groups = _focus_groups(reward)
    if not groups:
        raise ConfigError("reward has no active features")
    need = [[] for _ in groups]
    quota = [n // len(groups) + (g < n % len(groups)) for g in range(len(groups))]
    for _ in range(400):
        if all(len(need[g]) >= quota[g] for g in range(len(groups))):
            break
        q = sample_configs(chain, 2 * pool, rng).reshape(pool, 2, -1)
        raw = raw_state(chain, interpolate(q[:, 0], q[:, 1], T), scene)
        vals = np.stack([f(raw) for f in reward.features], axis=-1)
        sums = vals.sum(axis=1)
        ends = np.maximum(vals[:, 0], vals[:, -1])
        for g, grp in enumerate(groups):
            if len(need[g]) >= quota[g]:
                continue
            ok = np.ones(pool, bool)
            for i in grp:
                ok &= sums[:, i] >= _MIN_SUM.get(reward.features[i].kind, _MIN_SUM_DEFAULT)
                if endpoint_max is not None:
                    ok &= ends[:, i] <= endpoint_max
            for j in np.flatnonzero(ok)[: quota[g] - len(need[g])]:
                need[g].append(q[j])
    else:
        raise ConfigError("could not find informative start/goal pairs")
    pairs = [p for g in need for p in g]
    order = rng.permutation(len(pairs))
    pairs = np.stack([pairs[i] for i in order])
    return pairs[:, 0], pairs[:, 1]


def gt_cost(reward: GroundTruthReward):
    return LinearCost(reward.features, reward.weights)


def generate_demos(reward: GroundTruthReward, chain, scene, n, seed, traj_cfg: TrajConfig | None = None) -> DemoSet:
    """``n`` demonstrations: GT-optimal trajectories between informative start/goal pairs."""
    traj_cfg = traj_cfg or TrajConfig()
    rng = np.random.default_rng(seed)
    starts, goals = informative_pairs(reward, chain, scene, n, rng, traj_cfg.T)
    return DemoSet(optimize_traj(gt_cost(reward), starts, goals, chain, scene, traj_cfg))
