import numpy as np
import pytest

from conftest import central_diff, rel_err
from ferl.demos import generate_demos
from ferl.envs import task_reward
from ferl.errors import ConfigError, InvariantViolation
from ferl.kinematics import raw_state, sample_reachable_states
from ferl.reward_meirl import (DeepReward, MeirlConfig, RandomFeature, meirl_gradient, random_features,
                              train_meirl, train_shallow)
from ferl.reward_offline import IrlConfig
from ferl.serialization import reward_from_dict, reward_to_dict
from ferl.traj import TrajConfig


@pytest.fixture
def deep(chain, scene):
    _, known = task_reward("laptop_missing", chain, scene)
    return DeepReward.init(27, (6, 5), known, "positions", seed=3)


def test_head_initialisation(deep):
    np.testing.assert_array_equal(deep.head_w, [1.0, 1.0, 1.0])
    assert float(deep.head_b) == 0.0


def test_state_gradient(deep, rng):
    for _ in range(5):
        raw = rng.normal(scale=0.5, size=36)
        v, g = deep.value_and_grad(raw)
        assert v == pytest.approx(deep(raw))
        # known features use their own finite differences, hence the looser bound
        assert rel_err(g, central_diff(deep, raw, h=1e-5)) < 1e-4


def test_param_gradient(deep, rng):
    raw = rng.normal(scale=0.5, size=(8, 36))
    dc = rng.normal(size=8)
    grads = deep.param_grad(raw, dc)
    for p, g in zip(deep.params, grads):
        def f(pp, p=p):
            old = p.copy()
            p[...] = pp
            out = float(dc @ deep(raw))
            p[...] = old
            return out

        assert rel_err(g, central_diff(f, p.copy())) < 1e-6


def test_meirl_gradient_is_demo_minus_sample_mean(deep, rng):
    D, S = rng.normal(size=(2, 4, 36)), rng.normal(size=(3, 4, 36))
    grads = meirl_gradient(deep, D, S)

    def obj():
        return deep(D).sum(-1).mean() - deep(S).sum(-1).mean()

    p = deep.head_b
    old = float(p)
    h = 1e-6
    p[...] = old + h
    up = obj()
    p[...] = old - h
    dn = obj()
    p[...] = old
    assert grads[-1] == pytest.approx((up - dn) / (2 * h), rel=1e-6)
    with pytest.raises(ConfigError):
        meirl_gradient(deep, D[:0], S)


def test_deep_roundtrip(deep, scene, rng):
    back = reward_from_dict(reward_to_dict(deep), scene)
    raw = rng.normal(size=(5, 36))
    np.testing.assert_allclose(back(raw), deep(raw), rtol=1e-15)


def test_head_size_checked(deep):
    with pytest.raises(ConfigError):
        DeepReward(deep.body, [1.0], 0.0, deep.known)


def test_deep_training_lowers_demo_cost_gap(chain, scene):
    gt, _ = task_reward("one_feature", chain, scene)
    cfg = TrajConfig(iters=40)
    demos = generate_demos(gt, chain, scene, 3, seed=0, traj_cfg=cfg)
    reward, hist = train_meirl(demos, chain, scene, MeirlConfig(iterations=6, hidden=(16, 16), traj=cfg), seed=0)
    assert len(hist) == 6
    assert hist[-1][1] < hist[0][1]
    again, _ = train_meirl(demos, chain, scene, MeirlConfig(iterations=6, hidden=(16, 16), traj=cfg), seed=0)
    raw = sample_reachable_states(chain, scene, 10, 0)
    np.testing.assert_array_equal(reward(raw), again(raw))


def test_random_features_scaled_to_reference(chain, scene):
    X = sample_reachable_states(chain, scene, 300, 1)
    feats = random_features(3, X, seed=2)
    for f in feats:
        v = f(X)
        assert v.min() == pytest.approx(0.0, abs=1e-12)
        assert v.max() == pytest.approx(1.0, abs=1e-12)
    assert not np.allclose(feats[0](X), feats[1](X))
    with pytest.raises(ConfigError):
        random_features(0, X)


def test_random_feature_gradient(chain, scene, rng):
    X = sample_reachable_states(chain, scene, 300, 1)
    f = random_features(1, X, seed=0)[0]
    raw = X[:4]
    _, g = f.value_and_grad(raw)
    # float32 evaluation: compare against a float64 finite difference on the network itself
    from ferl.nn import backward, forward

    idx = f.index
    y, cache = forward(f.net, raw[:, idx])
    _, dx = backward(f.net, cache, np.full((4, 1), 1.0 / (f.hi - f.lo)))
    assert rel_err(g[:, idx], dx) < 1e-4
    assert np.all(g[:, 27:] == 0)


def test_constant_random_feature_rejected():
    from ferl.nn import init_net

    with pytest.raises(InvariantViolation):
        RandomFeature(init_net([27, 4, 1]), "positions", 1.0, 1.0)


def test_shallow_keeps_random_nets_frozen(chain, scene):
    gt, _ = task_reward("one_feature", chain, scene)
    cfg = TrajConfig(iters=30)
    demos = generate_demos(gt, chain, scene, 2, seed=0, traj_cfg=cfg)
    X = sample_reachable_states(chain, scene, 300, 1)
    before = [p.copy() for f in random_features(2, X, seed=5) for p in f.net.params]
    model, hist = train_shallow(demos, 2, chain, scene, X, IrlConfig(iterations=3, traj=cfg), seed=5)
    for a, b in zip(before, model.frozen_params()):
        np.testing.assert_array_equal(a, b)
    assert model.theta.shape == (2,)
    back = reward_from_dict(reward_to_dict(model), scene)
    np.testing.assert_allclose(back(X), model(X))
