import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from ferl.demos import generate_demos, informative_pairs
from ferl.envs import GroundTruthReward, task_reward
from ferl.errors import ConfigError
from ferl.reward_offline import (DemoSet, IrlConfig, LinearReward, boltzmann_logprob, irl_gradient, irl_update,
                                 linear_logprob, maxent_irl)
from ferl.traj import TrajConfig

costs = st.lists(st.floats(-20, 20), min_size=1, max_size=30)


@given(st.floats(-20, 20), st.floats(0, 10), costs)
def test_boltzmann_logprob_matches_direct_sum(c, beta, sample):
    direct = -beta * c - np.log(np.sum(np.exp(-beta * np.array(sample))))
    assert boltzmann_logprob(c, beta, sample) == pytest.approx(direct, rel=1e-9, abs=1e-9)


@given(costs)
def test_logprob_of_member_is_at_most_zero(sample):
    for c in sample:
        assert boltzmann_logprob(c, 1.3, sample) <= 1e-12


def test_logprob_at_zero_beta_is_uniform():
    assert boltzmann_logprob(5.0, 0.0, np.arange(101.0)) == pytest.approx(-np.log(101))
    with pytest.raises(ConfigError):
        boltzmann_logprob(1.0, 1.0, [])


def test_linear_logprob():
    Phi = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, 0.0]])
    theta = np.array([0.5, 1.0])
    assert linear_logprob(Phi[0], theta, 2.0, Phi) == pytest.approx(
        -2.0 * 2.5 - logsumexp(-2.0 * Phi @ theta))


def test_gradient_sign_under_cost_convention():
    # demos have less of feature 0 than the samples, so its cost weight must rise
    g = irl_gradient([[1.0, 2.0]], [[3.0, 2.0], [5.0, 2.0]])
    np.testing.assert_allclose(g, [-3.0, 0.0])
    theta = irl_update(np.zeros(2), g, 0.5)
    np.testing.assert_allclose(theta, [1.5, 0.0])


def test_gradient_validation():
    with pytest.raises(ConfigError):
        irl_gradient(np.zeros((0, 2)), [[1.0, 2.0]])
    with pytest.raises(ConfigError):
        irl_gradient([[1.0]], [[1.0, 2.0]])
    with pytest.raises(ConfigError):
        irl_update(np.zeros(2), np.zeros(3), 1.0)


def test_linear_reward_shape_checked(scene):
    from ferl.envs import GroundTruthFeature

    with pytest.raises(ConfigError):
        LinearReward([GroundTruthFeature("table", scene)], [1.0, 2.0])
    r = LinearReward([GroundTruthFeature("table", scene)], [1.0]).append(GroundTruthFeature("laptop", scene))
    np.testing.assert_array_equal(r.theta, [1.0, 0.0])


def test_informative_pairs_exercise_features(chain, scene):
    gt, _ = task_reward("two_features", chain, scene)
    S, G = informative_pairs(gt, chain, scene, 6, np.random.default_rng(0))
    assert S.shape == G.shape == (6, 7)


def test_demos_deterministic(chain, scene):
    gt, _ = task_reward("one_feature", chain, scene)
    cfg = TrajConfig(iters=20)
    a = generate_demos(gt, chain, scene, 2, seed=3, traj_cfg=cfg)
    b = generate_demos(gt, chain, scene, 2, seed=3, traj_cfg=cfg)
    for x, y in zip(a.demonstrations, b.demonstrations):
        np.testing.assert_array_equal(x.waypoints, y.waypoints)
    back = DemoSet.from_list(a.to_list())
    assert back.n_states == a.n_states == 2 * 21


def test_maxent_recovers_positive_weights_with_gt_features(chain, scene):
    gt, _ = task_reward("two_features", chain, scene)
    demos = generate_demos(gt, chain, scene, 4, seed=0, traj_cfg=TrajConfig(iters=60))
    reward, hist = maxent_irl(gt.features, demos, chain, scene, IrlConfig(iterations=8, traj=TrajConfig(iters=60)))
    assert np.all(reward.theta > 0)
    assert len(hist) == 8
    assert hist[-1][1] < hist[0][1]


def test_maxent_needs_demos(chain, scene):
    gt, _ = task_reward("one_feature", chain, scene)
    with pytest.raises(ConfigError):
        maxent_irl(gt.features, DemoSet([]), chain, scene)


def test_irl_config_validation():
    with pytest.raises(ConfigError, match="irl.lr"):
        IrlConfig(lr=-1)
    with pytest.raises(ConfigError):
        IrlConfig(init="ones")
