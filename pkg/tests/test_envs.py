import numpy as np
import pytest
from hypothesis import given, strategies as st

from ferl.envs import (FEATURE_KINDS, GroundTruthFeature, GroundTruthReward, Scene, gt_reward, normalized_feature,
                       task_reward)
from ferl.errors import ConfigError
from ferl.kinematics import KinematicChain, sample_reachable_states


@pytest.fixture(scope="module")
def states():
    return sample_reachable_states(KinematicChain(), Scene(), 3000, seed=0)


@pytest.mark.parametrize("kind", FEATURE_KINDS)
def test_normalised_features_in_unit_range(kind, states, chain, scene):
    v = normalized_feature(kind, chain, scene)(states)
    assert v.min() >= 0.0
    assert v.max() <= 1.0 + 1e-9
    assert v.max() > 0.05  # the feature is actually exercised


def test_table_is_height_above_table(scene):
    raw = np.zeros(36)
    raw[20] = 0.42
    assert GroundTruthFeature("table", scene)(raw) == pytest.approx(0.42)


def test_coffee_zero_when_upright(scene):
    raw = np.zeros(36)
    raw[27:36] = np.eye(3).ravel()
    assert GroundTruthFeature("coffee", scene)(raw) == 0.0
    raw[27:36] = np.diag([1.0, -1.0, -1.0]).ravel()
    assert GroundTruthFeature("coffee", scene)(raw) == pytest.approx(2.0)


def test_laptop_peaks_over_laptop(scene):
    f = GroundTruthFeature("laptop", scene)
    raw = np.zeros(36)
    raw[18:20] = scene.laptop_xyz[:2]
    assert f(raw) == pytest.approx(f.radius)
    raw[18] += 1.0
    assert f(raw) == 0.0


@given(st.sampled_from(FEATURE_KINDS), st.integers(0, 10_000))
def test_fd_gradient_agrees_with_directional_change(kind, seed):
    scene = Scene()
    f = GroundTruthFeature(kind, scene)
    rng = np.random.default_rng(seed)
    raw = sample_reachable_states(KinematicChain(), scene, 1, seed)[0]
    _, g = f.value_and_grad(raw)
    d = np.zeros(36)
    d[18:21] = rng.normal(size=3)
    d[27:36] = rng.normal(size=9)
    h = 1e-5
    fd = (f(raw + h * d) - f(raw - h * d)) / (2 * h)
    assert g @ d == pytest.approx(fd, abs=1e-4)


def test_unknown_kind_rejected(scene):
    with pytest.raises(ConfigError):
        GroundTruthFeature("kettle", scene)


def test_scene_reach_check(chain):
    with pytest.raises(ConfigError, match="scene.laptop_xyz"):
        Scene(laptop_xyz=[5.0, 0.0, 0.0]).check_reach(chain)
    Scene().check_reach(chain)


def test_scene_roundtrip():
    s = Scene(laptop_xyz=[0.1, 0.2, 0.0])
    back = Scene.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.laptop_xyz, s.laptop_xyz)


@pytest.mark.parametrize("task,n_feat,n_known", [
    ("one_feature", 1, 0), ("two_features", 2, 0), ("three_features", 3, 0),
    ("laptop_missing", 3, 2), ("table_missing", 3, 2), ("proxemics_missing", 3, 2),
])
def test_task_rewards(task, n_feat, n_known, chain, scene):
    gt, known = task_reward(task, chain, scene)
    assert len(gt.features) == n_feat
    assert len(known) == n_known
    assert all(k is f for k, f in zip(known, gt.features))


def test_laptop_missing_weights(chain, scene):
    gt, _ = task_reward("laptop_missing", chain, scene)
    assert [f.kind for f in gt.features] == ["coffee", "table", "laptop"]
    np.testing.assert_array_equal(gt.weights, [0.0, 10.0, 10.0])


def test_gt_reward_is_linear(chain, scene, rng):
    gt, _ = task_reward("three_features", chain, scene)
    Phi = rng.uniform(size=(5, 3))
    np.testing.assert_allclose(gt_reward(gt, Phi), Phi @ gt.weights)
    with pytest.raises(ConfigError):
        gt_reward(gt, np.ones(2))


def test_weights_length_checked(scene):
    with pytest.raises(ConfigError):
        GroundTruthReward([GroundTruthFeature("table", scene)], [1.0, 2.0])
