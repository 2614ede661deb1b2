import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankope import oracle
from rankope.behavior import BehaviorDistribution, canonical_model, model_from_name
from rankope.core import FactoredPolicy, RankingDataset
from rankope.estimators import (
    BehaviorAssignment,
    estimate_aips,
    estimate_iips,
    estimate_ips,
    estimate_rips,
    estimate_with_model,
)
from rankope.exceptions import ConfigError, DimensionError, MissingLatentError, SupportViolationError
from rankope.synthetic import build_env, evaluation_policy, logging_policy, sample_dataset


def _data(seed=0, n=40, K=3, A=3):
    rng = np.random.default_rng(seed)
    pi = FactoredPolicy.from_table(rng.dirichlet(np.ones(A), size=K))
    pi0 = FactoredPolicy.from_table(rng.dirichlet(np.ones(A), size=K) * 0.7 + 0.3 / A)
    x = rng.normal(size=(n, 2))
    ds = RankingDataset(x, pi0.sample(x, rng), rng.normal(size=(n, K)), A)
    return ds, pi, pi0


def test_on_policy_estimates_are_sample_means():
    ds, _, pi0 = _data()
    for est in (estimate_ips, estimate_iips, estimate_rips):
        assert est(ds, pi0, pi0, 1).value == pytest.approx(ds.rewards[:, 1].mean())


def test_single_record_weight():
    pi = FactoredPolicy.from_table([[0.8, 0.2]])
    pi0 = FactoredPolicy.from_table([[0.4, 0.6]])
    ds = RankingDataset(np.zeros((1, 1)), np.array([[0]]), np.array([[0.5]]), 2)
    assert estimate_ips(ds, pi, pi0, 0).value == pytest.approx(1.0)


def test_canonical_equivalences():
    ds, pi, pi0 = _data(K=4)
    K = 4
    assert estimate_rips(ds, pi, pi0, K - 1).value == estimate_ips(ds, pi, pi0, K - 1).value
    assert estimate_rips(ds, pi, pi0, 0).value == estimate_iips(ds, pi, pi0, 0).value
    for k in range(K):
        assert estimate_iips(ds, pi, pi0, k).value == estimate_with_model(ds, pi, pi0, k, canonical_model("I", K)).value
        assert estimate_ips(ds, pi, pi0, k).value == estimate_with_model(ds, pi, pi0, k, canonical_model("S", K)).value


def test_true_latent_in_single_model_environment():
    env = build_env(ranking_size=3)
    model = model_from_name("C1", 3)
    env = env.with_behavior(BehaviorDistribution([model], [0.0], np.ones((1, env.d)), 0.5))
    pi, pi0 = evaluation_policy(env), logging_policy(env)
    ds = sample_dataset(env, pi0, 200, np.random.default_rng(0))
    for k in range(3):
        got = estimate_aips(ds, pi, pi0, k, BehaviorAssignment.true_latent()).value
        assert got == estimate_with_model(ds, pi, pi0, k, model).value


def test_assignment_errors():
    ds, pi, pi0 = _data()
    with pytest.raises(MissingLatentError):
        estimate_aips(ds, pi, pi0, 0, BehaviorAssignment.true_latent())
    with pytest.raises(ConfigError):
        BehaviorAssignment(None, "tree")
    bad = BehaviorAssignment(lambda x: np.ones((len(x), 2, 2)), "tree")
    with pytest.raises(DimensionError):
        estimate_aips(ds, pi, pi0, 0, bad)
    with pytest.raises(DimensionError):
        estimate_ips(ds, pi, pi0, 3)


def test_zero_logging_support_is_rejected():
    pi = FactoredPolicy.from_table([[0.5, 0.5]])
    pi0 = FactoredPolicy.from_table([[1.0, 0.0]])
    ds = RankingDataset(np.zeros((1, 1)), np.array([[1]]), np.array([[1.0]]), 2)
    with pytest.raises(SupportViolationError):
        estimate_ips(ds, pi, pi0, 0)


def _instance(model_names, seed=0):
    env = build_env(ranking_size=2, num_actions=2, sigma=0.0, seed=seed)
    models = [model_from_name(m, 2) for m in model_names]
    env = env.with_behavior(BehaviorDistribution(models, np.zeros(len(models)), np.random.default_rng(seed).random((len(models), env.d)), 0.5))
    x = np.random.default_rng(seed + 1).normal(size=(1, env.d))
    return oracle.EnumerationInstance.from_env(env, x, evaluation_policy(env), logging_policy(env))


def test_enumeration_expectations():
    inst = _instance(["C", "I"])
    for k in range(2):
        value = oracle.exact_value(inst, k)
        assert oracle.exact_moments(inst, "ips", k).mean == pytest.approx(value, abs=1e-12)
        assert oracle.exact_moments(inst, "aips_true", k).mean == pytest.approx(value, abs=1e-12)
        assert oracle.exact_moments(inst, canonical_model("S", 2), k).mean == pytest.approx(value, abs=1e-12)
    pure = _instance(["I"])
    for k in range(2):
        assert oracle.exact_moments(pure, "iips", k).mean == pytest.approx(oracle.exact_value(pure, k), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_superset_models_are_unbiased_in_expectation(seed):
    inst = oracle.random_instance(np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    sup = oracle.random_superset(oracle.assignment_bits(inst, "aips_true"), rng)
    for k in range(inst.ranking_size):
        assert oracle.exact_moments(inst, sup, k).mean == pytest.approx(oracle.exact_value(inst, k), abs=1e-10)
