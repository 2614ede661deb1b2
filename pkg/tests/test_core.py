import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankope.behavior import canonical_model
from rankope.core import (
    FactoredPolicy,
    JointPolicy,
    PositionedSubset,
    RankingDataset,
    importance_weight,
    marginal_prob,
    relevant_set,
)
from rankope.exceptions import DimensionError, SupportViolationError

X = np.zeros(2)


def test_relevant_set_examples():
    a = (2, 0, 1)
    assert relevant_set(a, canonical_model("independence", 3), 1).pairs() == {(1, 0)}
    assert relevant_set(a, canonical_model("standard", 3), 0).pairs() == {(0, 2), (1, 0), (2, 1)}
    assert relevant_set(a, canonical_model("cascade", 3), 1).pairs() == {(0, 2), (1, 0)}


def test_relevant_set_rejects_mismatched_length():
    with pytest.raises(DimensionError):
        relevant_set((0, 1), canonical_model("standard", 3), 0)


def test_positioned_subset_keeps_one_entry_per_position():
    with pytest.raises(DimensionError):
        PositionedSubset((0, 0), (1, 2))
    assert PositionedSubset.from_pairs([(2, 1), (0, 0)]).positions == (0, 2)
    assert PositionedSubset.from_pairs([(1, 0)]).complement_positions(3) == (0, 2)


def test_marginal_prob_examples():
    pol = FactoredPolicy.from_table([[0.7, 0.3], [0.4, 0.6]])
    assert marginal_prob(pol, X, PositionedSubset.empty()) == 1.0
    assert marginal_prob(pol, X, PositionedSubset.from_pairs([(0, 1), (1, 0)])) == pytest.approx(0.12)
    full = PositionedSubset.from_pairs([(0, 0), (1, 1)])
    assert marginal_prob(pol, X, full) == pytest.approx(pol.ranking_prob(X, (0, 1)))


def test_importance_weight_examples():
    pi = FactoredPolicy.from_table([[0.9, 0.1]])
    pi0 = FactoredPolicy.from_table([[0.5, 0.5]])
    assert importance_weight(pi, pi0, X, PositionedSubset.from_pairs([(0, 0)])) == pytest.approx(1.8)
    assert importance_weight(pi, pi0, X, PositionedSubset.empty()) == 1.0
    assert importance_weight(pi0, pi0, X, PositionedSubset.from_pairs([(0, 1)])) == 1.0


def test_importance_weight_rejects_zero_logging_support():
    pi = FactoredPolicy.from_table([[0.5, 0.5]])
    pi0 = FactoredPolicy.from_table([[1.0, 0.0]])
    with pytest.raises(SupportViolationError):
        importance_weight(pi, pi0, X, PositionedSubset.from_pairs([(0, 1)]))


def test_joint_policy_marginals_sum_over_free_positions():
    table = np.array([[0.7, 0.3], [0.4, 0.6], [0.2, 0.8]])
    factored = FactoredPolicy.from_table(table)
    joint = JointPolicy(lambda x, a: factored.ranking_prob(x, a), 3, 2)
    sub = PositionedSubset.from_pairs([(0, 1), (2, 0)])
    assert joint.subset_prob(X, sub) == pytest.approx(marginal_prob(factored, X, sub))


def test_prob_table_rejects_bad_rows():
    pol = FactoredPolicy.from_table([[0.7, 0.2]])
    with pytest.raises(ValueError):
        pol.prob_table(np.zeros((1, 2)))


def _dataset(n=5, K=3, latent=False):
    rng = np.random.default_rng(0)
    bits = np.ones((n, K, K), dtype=np.uint8) if latent else None
    return RankingDataset(rng.normal(size=(n, 2)), rng.integers(0, 2, (n, K)), rng.normal(size=(n, K)), 2, bits)


def test_dataset_validation_and_views():
    ds = _dataset(latent=True)
    assert ds.oracle_visible and ds.n == 5 and ds.ranking_size == 3 and ds.dim_context == 2
    assert not ds.without_latent().oracle_visible
    sub = ds.subset([0, 2])
    assert sub.n == 2 and np.array_equal(sub.actions, ds.actions[[0, 2]])
    both = RankingDataset.concat([ds, sub])
    assert both.n == 7 and both.oracle_visible
    with pytest.raises(ValueError):
        ds.contexts[0, 0] = 1.0
    with pytest.raises(DimensionError):
        RankingDataset(np.zeros((2, 1)), np.zeros((2, 2), dtype=int), np.zeros((3, 2)), 2)
    with pytest.raises(DimensionError):
        RankingDataset(np.zeros((1, 1)), np.array([[2]]), np.zeros((1, 1)), 2)
    rec = ds.record(1)
    assert np.array_equal(rec.action, ds.actions[1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(2, 4), st.integers(0, 10**6))
def test_marginals_of_factored_policy_sum_to_one(K, A, seed):
    rng = np.random.default_rng(seed)
    pol = FactoredPolicy.from_table(rng.dirichlet(np.ones(A), size=K))
    positions = tuple(sorted(rng.choice(K, size=rng.integers(1, K + 1), replace=False)))
    total = sum(
        marginal_prob(pol, X, PositionedSubset(positions, combo))
        for combo in itertools.product(range(A), repeat=len(positions))
    )
    assert total == pytest.approx(1.0, abs=1e-12)
