import numpy as np
import pytest

from rankope.behavior import BehaviorDistribution, canonical_model
from rankope.exceptions import CapacityError, ConfigError
from rankope.synthetic import (
    AlphaWeights,
    EnvConfig,
    base_reward,
    build_env,
    enumerate_position_value,
    evaluation_policy,
    exact_value,
    expected_reward,
    logging_policy,
    sample_contexts,
    sample_dataset,
)


def _single_model_env(model="S", **kw):
    env = build_env(**kw)
    K = env.ranking_size
    bits = canonical_model(model, K)
    return env.with_behavior(BehaviorDistribution([bits], [0.0], np.ones((1, env.d)), 0.5))


def test_same_seed_same_environment():
    a, b = build_env(seed=3), build_env(seed=3)
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.W, b.W)
    assert not np.array_equal(a.theta, build_env(seed=4).theta)


def test_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(delta=1.5)
    with pytest.raises(ConfigError):
        EnvConfig(num_actions=1)
    with pytest.raises(ConfigError):
        EnvConfig(models=("S",), gammas=(1.0, 2.0))


def test_base_reward_examples():
    env = build_env(d=3)
    zero = np.zeros(3)
    assert base_reward(env, zero, 1) == pytest.approx(env.bias[1])
    x1, x2 = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 3.0])
    lin = base_reward(env, x1, 0) + base_reward(env, x2, 0) - env.bias[0]
    assert base_reward(env, x1 + x2, 0) == pytest.approx(lin)


def test_expected_reward_examples():
    env = build_env(ranking_size=2, d=2)
    x = np.array([0.4, -0.3])
    a = (1, 0)
    assert expected_reward(env, x, a, canonical_model("I", 2), 1) == pytest.approx(base_reward(env, x, 0))
    assert expected_reward(env, x, a, np.zeros((2, 2), dtype=np.uint8), 0) == 0.0
    want = base_reward(env, x, 1) + env.W[1, 0]
    assert expected_reward(env, x, a, canonical_model("S", 2), 0) == pytest.approx(want)


def test_policies():
    env = build_env(num_actions=2, ranking_size=3)
    x = sample_contexts(env, 10, np.random.default_rng(0))
    pi0 = logging_policy(env).prob_table(x)
    assert np.all(pi0 > 0) and np.allclose(pi0[:, 0], pi0[:, 2])
    pi = evaluation_policy(env).prob_table(x)
    assert sorted(pi[0, 0].round(10).tolist()) == [0.15, 0.85]
    assert np.allclose(evaluation_policy(env, epsilon=1.0).prob_table(x), 0.5)
    det = evaluation_policy(env, epsilon=0.0).prob_table(x)
    assert np.all(det.max(axis=2) == 1.0)


def test_logging_policy_is_uniform_for_equal_scores():
    env = build_env(num_actions=3, d=2)
    env = env.__class__(env.config, env.theta, env.bias, env.W, np.zeros((3, 2)), np.zeros(3), env.behavior)
    assert np.allclose(logging_policy(env).prob_table(np.ones((1, 2))), 1 / 3)


def test_noise_free_rewards_equal_means():
    env = build_env(sigma=0.0, ranking_size=3)
    ds = sample_dataset(env, logging_policy(env), 50, np.random.default_rng(0))
    from rankope.synthetic import expected_rewards

    assert np.allclose(ds.rewards, expected_rewards(env, ds.contexts, ds.actions, ds.latent_behavior))


def test_dataset_sampling_is_deterministic_and_hides_latent():
    env = build_env()
    a = sample_dataset(env, logging_policy(env), 20, np.random.default_rng(1))
    b = sample_dataset(env, logging_policy(env), 20, np.random.default_rng(1), oracle_visible=False)
    assert np.array_equal(a.rewards, b.rewards) and b.latent_behavior is None


def test_on_policy_mean_matches_exact_value():
    env = build_env(ranking_size=3)
    pi = evaluation_policy(env)
    ds = sample_dataset(env, pi, 100_000, np.random.default_rng(2))
    for k in range(3):
        exact = exact_value(env, pi, k, ds.contexts)
        r = ds.rewards[:, k]
        assert abs(r.mean() - exact) <= 3 * r.std() / np.sqrt(len(r))


def test_exact_value_examples():
    env = _single_model_env("S", ranking_size=1, num_actions=2, d=2)
    x = np.array([[0.2, 0.7]])
    uniform = evaluation_policy(env, epsilon=1.0)
    want = 0.5 * (base_reward(env, x[0], 0) + base_reward(env, x[0], 1))
    assert exact_value(env, uniform, 0, x) == pytest.approx(want)
    det = evaluation_policy(env, epsilon=0.0)
    chosen = int(det.prob_table(x[0])[0].argmax())
    assert exact_value(env, det, 0, x) == pytest.approx(base_reward(env, x[0], chosen))


def test_closed_form_matches_enumeration_and_monte_carlo():
    env = build_env(ranking_size=4, num_actions=2)
    pi = evaluation_policy(env)
    x = sample_contexts(env, 3, np.random.default_rng(0))
    for k in range(4):
        assert exact_value(env, pi, k, x) == pytest.approx(exact_value(env, pi, k, x, method="enumerate"), abs=1e-12)
    xi = x[:1]
    rng = np.random.default_rng(5)
    n = 1_000_000
    ctx = np.repeat(xi, n, axis=0)
    idx = env.behavior.sample_indices(ctx, rng)
    bits = env.behavior.stacked_bits[idx]
    actions = pi.sample(ctx, rng)
    from rankope.synthetic import expected_rewards

    q = expected_rewards(env, ctx, actions, bits)[:, 2]
    assert abs(q.mean() - enumerate_position_value(env, pi, 2, xi[0])) <= 4 * q.std() / np.sqrt(n)


def test_enumeration_capacity_guard():
    env = build_env(ranking_size=21, num_actions=2)
    with pytest.raises(CapacityError):
        exact_value(env, evaluation_policy(env), 0, np.zeros((1, 5)), method="enumerate")


def test_alpha_weights():
    assert AlphaWeights.dcg(3).alpha == pytest.approx([1.0, 1 / np.log2(3), 0.5])
    assert AlphaWeights.preset("uniform", 2).alpha.tolist() == [1.0, 1.0]
    env = build_env(ranking_size=2)
    pi = evaluation_policy(env)
    x = np.zeros((1, 5))
    total = exact_value(env, pi, None, x, alpha=[1.0, 2.0])
    assert total == pytest.approx(exact_value(env, pi, 0, x) + 2 * exact_value(env, pi, 1, x))
    with pytest.raises(ConfigError):
        exact_value(env, pi, None, x)
