import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankope import oracle
from rankope.exceptions import ConfigError, InsufficientDataError


def test_cvar_examples():
    assert oracle.cvar([1, 2, 3, 4], 0.5) == 3.5
    assert oracle.cvar([1, 2, 3, 4], 1.0) == 2.5
    assert oracle.cvar([1, 2, 3, 4], 0.1) == 4.0
    with pytest.raises(ConfigError):
        oracle.cvar([1.0], 0.0)
    with pytest.raises(InsufficientDataError):
        oracle.cvar([], 0.5)


def test_relative_se_cdf_and_win_rate():
    errs = {"a": [1.0, 2.0, 4.0], "b": [2.0, 2.0, 2.0]}
    ratios, cdf = oracle.relative_se_cdf(errs, "b")["a"]
    assert ratios.tolist() == [0.5, 1.0, 2.0]
    assert cdf.tolist() == pytest.approx([1 / 3, 2 / 3, 1.0])
    ref_ratios, _ = oracle.relative_se_cdf(errs, "b")["b"]
    assert np.all(ref_ratios == 1.0)
    assert oracle.win_rate(errs, "a") == pytest.approx(1 / 3)
    assert oracle.win_rate({"a": [1.0]}, "a") == 1.0


def test_mse_decompose_examples():
    dec = oracle.mse_decompose([(1.0, 1.0), (1.0, 1.0)])
    assert (dec.mse, dec.bias_sq, dec.variance) == (0.0, 0.0, 0.0)
    dec = oracle.mse_decompose([(2.0, 0.0), (4.0, 0.0)])
    assert (dec.bias_sq, dec.variance, dec.mse) == (9.0, 1.0, 10.0)
    with pytest.raises(InsufficientDataError):
        oracle.mse_decompose([(1.0, 1.0)])


def test_variance_gap_vanishes_on_policy_and_for_full_truth():
    rng = np.random.default_rng(0)
    inst = oracle.random_instance(rng)
    on = oracle.EnumerationInstance(inst.model_bits, inst.model_probs, inst.logging_policy, inst.logging_policy, inst.q, inst.sigma)
    K = inst.ranking_size
    for k in range(K):
        assert abs(oracle.thm2_variance_gap(on, k)) < 1e-12
    full = oracle.EnumerationInstance(np.ones_like(inst.model_bits), inst.model_probs, inst.policy, inst.logging_policy, inst.q, inst.sigma)
    for k in range(K):
        assert abs(oracle.thm2_variance_gap(full, k)) < 1e-12


def test_reward_noise_adds_second_moment_of_weight():
    rng = np.random.default_rng(1)
    base = oracle.random_instance(rng, sigma=0.0)
    noisy = oracle.EnumerationInstance(base.model_bits, base.model_probs, base.policy, base.logging_policy, base.q, 0.7)
    w2 = oracle.exact_moments(
        oracle.EnumerationInstance(base.model_bits, base.model_probs, base.policy, base.logging_policy, np.ones_like(base.q), 0.0),
        "ips", 0,
    ).second_moment
    gain = oracle.exact_moments(noisy, "ips", 0).variance - oracle.exact_moments(base, "ips", 0).variance
    assert gain == pytest.approx(w2 * 0.49, rel=1e-10)


def test_exact_moments_scale_with_n():
    inst = oracle.random_instance(np.random.default_rng(2))
    one, ten = oracle.exact_moments(inst, "ips", 0), oracle.exact_moments(inst, "ips", 0, n=10)
    assert ten.variance == pytest.approx(one.variance / 10)
    with pytest.raises(ConfigError):
        oracle.exact_moments(inst, "ips", 0, n=0)


def test_superset_must_contain_truth():
    inst = oracle.random_instance(np.random.default_rng(3), max_ranking_size=3)
    zeros = np.zeros((inst.ranking_size,) * 2)
    if np.any(inst.model_bits[:, 0]):
        with pytest.raises(ConfigError):
            oracle.thm2_variance_gap(inst, 0, superset=zeros)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_subset_bias_formula_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    inst = oracle.random_instance(rng)
    true_bits = oracle.assignment_bits(inst, "aips_true")
    sub = oracle.random_subset(np.asarray(true_bits), rng)
    k = int(rng.integers(inst.ranking_size))
    direct = oracle.exact_moments(inst, sub, k).mean - oracle.exact_value(inst, k)
    assert oracle.thm4_bias(inst, k, sub) == pytest.approx(direct, abs=1e-10)
