"""Exact enumeration engine and error summaries.

An :class:`EnumerationInstance` holds a finite, uniformly weighted context
set, a finite behavior distribution per context, factored policies and the
mean reward of every ranking.  Estimator moments are then exact sums over
every (context, behavior, ranking) triple, which makes unbiasedness,
variance-gap and bias identities checkable to floating-point precision.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .behavior import BehaviorMatrix, canonical_model
from .exceptions import (
    CapacityError,
    ConfigError,
    DimensionError,
    InsufficientDataError,
    SupportViolationError,
)
from .synthetic import ENUMERATION_LIMIT, SyntheticEnvironment, expected_rewards

PROB_ATOL = 1e-9


def all_rankings(num_actions: int, K: int, limit: int = ENUMERATION_LIMIT) -> np.ndarray:
    """``(|A|^K, K)`` array of every ranking, lexicographic order."""
    if num_actions**K > limit:
        raise CapacityError(f"|A|^K = {num_actions**K} exceeds the enumeration limit {limit}")
    return np.array(list(itertools.product(range(num_actions), repeat=K)), dtype=np.int64).reshape(-1, K)


@dataclass(frozen=True, eq=False)
class EnumerationInstance:
    """Finite OPE problem solvable by enumeration.

    Parameters
    ----------
    model_bits: (Z, K, K)
        Behavior matrices.
    model_probs: (m, Z)
        ``p(c_z | x_i)`` for every context.
    policy, logging_policy: (m, K, |A|)
        Factored position tables of the evaluation and logging policies.
    q: (m, Z, |A|^K, K)
        Mean reward of every position for every context, model and ranking
        (rankings ordered as in :func:`all_rankings`).
    sigma: float
        Reward noise standard deviation.
    """

    model_bits: np.ndarray
    model_probs: np.ndarray
    policy: np.ndarray
    logging_policy: np.ndarray
    q: np.ndarray
    sigma: float
    contexts: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        bits = np.asarray(self.model_bits, dtype=np.uint8)
        probs = np.asarray(self.model_probs, dtype=float)
        pi = np.asarray(self.policy, dtype=float)
        pi0 = np.asarray(self.logging_policy, dtype=float)
        q = np.asarray(self.q, dtype=float)
        m, K, A = pi.shape
        if A**K > ENUMERATION_LIMIT:
            raise CapacityError(f"|A|^K = {A**K} exceeds the enumeration limit {ENUMERATION_LIMIT}")
        Z = bits.shape[0]
        if bits.shape != (Z, K, K) or probs.shape != (m, Z) or pi0.shape != pi.shape:
            raise DimensionError("inconsistent instance shapes")
        if q.shape != (m, Z, A**K, K):
            raise DimensionError(f"q must have shape {(m, Z, A**K, K)}, got {q.shape}")
        for name, table in (("policy", pi), ("logging_policy", pi0)):
            if np.any(table < 0) or not np.allclose(table.sum(axis=2), 1.0, atol=PROB_ATOL):
                raise ValueError(f"{name} rows must be probability vectors")
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=PROB_ATOL):
            raise ValueError("model probabilities must sum to 1 per context")
        if np.any((pi0 <= 0) & (pi > 0)):
            raise SupportViolationError("logging policy must cover the evaluation policy's support")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        for name, arr in (("model_bits", bits), ("model_probs", probs), ("policy", pi), ("logging_policy", pi0), ("q", q)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_contexts(self) -> int:
        return self.policy.shape[0]

    @property
    def ranking_size(self) -> int:
        return self.policy.shape[1]

    @property
    def num_actions(self) -> int:
        return self.policy.shape[2]

    @property
    def num_models(self) -> int:
        return self.model_bits.shape[0]

    @property
    def rankings(self) -> np.ndarray:
        return all_rankings(self.num_actions, self.ranking_size)

    def _position_probs(self, table: np.ndarray) -> np.ndarray:
        """``(m, R, K)`` probability of each ranking's action at each position."""
        K = self.ranking_size
        return table[:, np.arange(K)[None, :], self.rankings]

    def joint_probs(self, which: str = "logging") -> np.ndarray:
        """``(m, R)`` ranking probabilities under the logging or evaluation policy."""
        table = self.logging_policy if which == "logging" else self.policy
        return self._position_probs(table).prod(axis=2)

    def ratios(self) -> np.ndarray:
        """``(m, R, K)`` per-position ratios; zero where both policies are zero."""
        num = self._position_probs(self.policy)
        den = self._position_probs(self.logging_policy)
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    @classmethod
    def from_env(
        cls,
        env: SyntheticEnvironment,
        contexts: np.ndarray,
        policy,
        logging_policy,
    ) -> "EnumerationInstance":
        """Instance whose rewards and behavior distribution come from ``env``."""
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        K, A = env.ranking_size, env.num_actions
        rankings = all_rankings(A, K)
        models = env.behavior.models
        q = np.empty((len(x), len(models), len(rankings), K))
        for i, xi in enumerate(x):
            xs = np.broadcast_to(xi, (len(rankings), xi.size))
            for z, model in enumerate(models):
                q[i, z] = expected_rewards(env, xs, rankings, model.bits)
        return cls(
            np.stack([mdl.bits for mdl in models]),
            env.behavior.probs(x),
            policy.prob_table(x),
            logging_policy.prob_table(x),
            q,
            env.sigma,
            x,
        )


def _relevant_code(rankings: np.ndarray, row: np.ndarray, num_actions: int) -> np.ndarray:
    """Integer code of each ranking restricted to the positions flagged in ``row``."""
    masked = np.where(np.asarray(row, dtype=bool)[None, :], rankings + 1, 0)
    powers = (num_actions + 1) ** np.arange(rankings.shape[1])
    return masked @ powers


def random_instance(
    rng: np.random.Generator,
    max_actions: int = 3,
    max_ranking_size: int = 3,
    num_models: Optional[int] = None,
    num_contexts: int = 3,
    sigma: Optional[float] = None,
) -> EnumerationInstance:
    """Random enumerable instance.

    Behavior matrices are random 0/1 matrices; each ``q_k`` is a random
    function of the actions at the positions its behavior row flags, so the
    relevant-action structure holds by construction.  Policies are random
    full-support position tables.
    """
    A = int(rng.integers(2, max_actions + 1))
    K = int(rng.integers(1, max_ranking_size + 1))
    Z = int(num_models if num_models is not None else rng.integers(2, 4))
    m = num_contexts
    bits = (rng.random((Z, K, K)) < 0.5).astype(np.uint8)
    probs = rng.dirichlet(np.ones(Z), size=m)
    pi = rng.dirichlet(np.ones(A), size=(m, K))
    pi0 = rng.dirichlet(np.ones(A), size=(m, K))
    pi0 = 0.9 * pi0 + 0.1 / A
    rankings = all_rankings(A, K)
    table_size = (A + 1) ** K
    q = np.empty((m, Z, len(rankings), K))
    for i in range(m):
        for z in range(Z):
            for k in range(K):
                table = rng.normal(size=table_size)
                q[i, z, :, k] = table[_relevant_code(rankings, bits[z, k], A)]
    s = float(rng.uniform(0.0, 1.0)) if sigma is None else float(sigma)
    return EnumerationInstance(bits, probs, pi, pi0, q, s)


def assignment_bits(instance: EnumerationInstance, assignment) -> np.ndarray:
    """Resolve an estimator spec into ``(m, Z, K, K)`` behavior bits.

    ``assignment`` may be ``"ips"``, ``"iips"``, ``"rips"``, ``"aips_true"``,
    a :class:`BehaviorMatrix` or ``(K, K)`` array (same model everywhere), an
    ``(m, K, K)`` array (one model per context) or an ``(m, Z, K, K)`` array
    (one model per context and true behavior).
    """
    m, Z, K = instance.num_contexts, instance.num_models, instance.ranking_size
    if isinstance(assignment, str):
        key = assignment.lower()
        if key in ("aips_true", "true"):
            return np.broadcast_to(instance.model_bits[None], (m, Z, K, K))
        named = {"ips": "standard", "iips": "independence", "rips": "cascade"}
        if key not in named:
            raise ConfigError(f"unknown estimator {assignment!r}")
        assignment = canonical_model(named[key], K)
    bits = np.asarray(getattr(assignment, "bits", assignment), dtype=np.uint8)
    if bits.shape == (K, K):
        return np.broadcast_to(bits, (m, Z, K, K))
    if bits.shape == (m, K, K):
        return np.broadcast_to(bits[:, None], (m, Z, K, K))
    if bits.shape == (m, Z, K, K):
        return bits
    raise DimensionError(f"cannot interpret assignment of shape {bits.shape}")


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    second_moment: float


def _check_position(instance: EnumerationInstance, k: int) -> None:
    if not 0 <= k < instance.ranking_size:
        raise DimensionError(f"position {k} outside [0, {instance.ranking_size})")


def _weights(instance: EnumerationInstance, bits: np.ndarray, k: int) -> np.ndarray:
    """``(m, Z, R)`` importance weight over the positions in row ``k``."""
    ratios = instance.ratios()
    rows = bits[:, :, k, :].astype(bool)
    return np.where(rows[:, :, None, :], ratios[:, None, :, :], 1.0).prod(axis=3)


def exact_value(instance: EnumerationInstance, k: int) -> float:
    """``V_k`` by direct summation under the evaluation policy."""
    _check_position(instance, k)
    joint = instance.joint_probs("policy")
    per_model = np.einsum("mr,mzr->mz", joint, instance.q[..., k])
    return float((instance.model_probs * per_model).sum(axis=1).mean())


def exact_moments(instance: EnumerationInstance, assignment, k: int, n: int = 1) -> Moments:
    """Exact mean and variance of the n-record estimator.

    Rewards enter only through ``E[r_k] = q_k`` and ``E[r_k^2] = q_k^2 + sigma^2``;
    the variance of an n-record average is the single-record variance over n.
    """
    _check_position(instance, k)
    if n < 1:
        raise ConfigError("n must be at least 1")
    bits = assignment_bits(instance, assignment)
    w = _weights(instance, bits, k)
    q = instance.q[..., k]
    joint0 = instance.joint_probs("logging")[:, None, :]
    pz = instance.model_probs
    mean = float((pz * (joint0 * w * q).sum(axis=2)).sum(axis=1).mean())
    second = float((pz * (joint0 * w**2 * (q**2 + instance.sigma**2)).sum(axis=2)).sum(axis=1).mean())
    return Moments(mean, (second - mean**2) / n, second)


def thm2_variance_gap(instance: EnumerationInstance, k: int, superset=None) -> float:
    """Variance reduction of true-behavior AIPS over a superset-model estimator.

    Evaluates, for one record,
    ``E[w_c^2 * Var(w_extra | x, Phi_k(a, c)) * E[r_k^2 | x, Phi_k(a, c)]]``
    where ``w_extra`` is the ratio over positions the superset adds. With
    factored policies the conditional variance is
    ``prod_{extra l} sum_a pi_l(a)^2 / pi0_l(a) - 1``. The default superset is
    the all-ones matrix (IPS).
    """
    _check_position(instance, k)
    m, Z, K = instance.num_contexts, instance.num_models, instance.ranking_size
    true_bits = assignment_bits(instance, "aips_true")
    sup = assignment_bits(instance, "ips" if superset is None else superset)
    if np.any(sup < true_bits):
        raise ConfigError("superset model must contain the true behavior elementwise")
    pi, pi0 = instance.policy, instance.logging_policy
    chi = np.divide(pi**2, pi0, out=np.zeros_like(pi), where=pi0 > 0).sum(axis=2)  # (m, K)
    extra = (sup[:, :, k, :] > true_bits[:, :, k, :])  # (m, Z, K)
    cond_var = np.where(extra, chi[:, None, :], 1.0).prod(axis=2) - 1.0  # (m, Z)
    w = _weights(instance, true_bits, k)
    q = instance.q[..., k]
    joint0 = instance.joint_probs("logging")[:, None, :]
    inner = (joint0 * w**2 * (q**2 + instance.sigma**2)).sum(axis=2)
    return float((instance.model_probs * cond_var * inner).sum(axis=1).mean())


def thm4_bias(instance: EnumerationInstance, k: int, assignment) -> float:
    """Bias of AIPS with an estimated behavior, as an expectation under the evaluation policy.

    ``E_{x, c, a ~ pi}[(dw_k - 1) q_k]`` with ``dw_k`` the logging-over-evaluation
    ratio over positions relevant under ``c`` but missing from the estimate.
    """
    _check_position(instance, k)
    true_bits = assignment_bits(instance, "aips_true")
    est = assignment_bits(instance, assignment)
    missing = (true_bits[:, :, k, :] > est[:, :, k, :])  # (m, Z, K)
    num = instance._position_probs(instance.logging_policy)
    den = instance._position_probs(instance.policy)
    inv = np.divide(num, den, out=np.ones_like(num), where=den > 0)  # (m, R, K)
    dw = np.where(missing[:, :, None, :], inv[:, None, :, :], 1.0).prod(axis=3)
    joint = instance.joint_probs("policy")[:, None, :]
    q = instance.q[..., k]
    per_model = (joint * (dw - 1.0) * q).sum(axis=2)
    return float((instance.model_probs * per_model).sum(axis=1).mean())


@dataclass(frozen=True)
class MseDecomposition:
    mse: float
    bias_sq: float
    variance: float


def mse_decompose(errors_per_run: Sequence) -> MseDecomposition:
    """Population-style decomposition of ``(estimate, truth)`` pairs.

    A single shared truth is assumed; ``truth`` values are averaged.
    ``mse = bias_sq + variance`` holds exactly up to rounding.
    """
    pairs = np.asarray(errors_per_run, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise DimensionError("expected a sequence of (estimate, truth) pairs")
    if pairs.shape[0] < 2:
        raise InsufficientDataError("MSE decomposition needs at least 2 runs")
    est, truth = pairs[:, 0], float(pairs[:, 1].mean())
    center = est.mean()
    bias_sq = float((center - truth) ** 2)
    variance = float(np.mean((est - center) ** 2))
    return MseDecomposition(bias_sq + variance, bias_sq, variance)


def decomposition_from_parts(bias: float, variance: float) -> MseDecomposition:
    """MSE for a known bias and variance."""
    return MseDecomposition(bias**2 + variance, bias**2, float(variance))


def cvar(errors: Sequence[float], alpha: float) -> float:
    """Mean of the ``ceil(alpha * n)`` largest errors."""
    errs = np.asarray(errors, dtype=float).ravel()
    if errs.size == 0:
        raise InsufficientDataError("CVaR of an empty error list is undefined")
    if not 0.0 < alpha <= 1.0:
        raise ConfigError("alpha must lie in (0, 1]")
    count = max(1, math.ceil(alpha * errs.size - 1e-12))
    return float(np.sort(errs)[::-1][:count].mean())


def relative_se_cdf(errors_by_estimator: Mapping[str, Sequence[float]], reference_estimator: str) -> dict:
    """Sorted SE ratios versus the reference, each with its empirical CDF.

    Returns ``{name: (ratios, cdf)}``. A zero reference error maps to ratio
    ``inf`` (or 1 when both errors are zero).
    """
    if reference_estimator not in errors_by_estimator:
        raise ConfigError(f"reference estimator {reference_estimator!r} missing")
    ref = np.asarray(errors_by_estimator[reference_estimator], dtype=float)
    out = {}
    for name, errs in errors_by_estimator.items():
        errs = np.asarray(errs, dtype=float)
        if errs.shape != ref.shape:
            raise DimensionError(f"estimator {name!r} has {errs.size} runs, reference has {ref.size}")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ref > 0, errs / np.where(ref > 0, ref, 1.0), np.where(errs > 0, np.inf, 1.0))
        ratio = np.sort(ratio)
        out[name] = (ratio, np.arange(1, ratio.size + 1) / ratio.size)
    return out


def win_rate(errors_by_estimator: Mapping[str, Sequence[float]], name: str) -> float:
    """Fraction of runs where ``name`` has the strictly smallest error."""
    names = list(errors_by_estimator)
    errs = np.stack([np.asarray(errors_by_estimator[n], dtype=float) for n in names])
    i = names.index(name)
    others = np.delete(errs, i, axis=0)
    if others.size == 0:
        return 1.0
    return float(np.mean(errs[i] < others.min(axis=0)))


def random_superset(bits: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    """Elementwise superset of ``bits`` adding each missing entry with probability ``p``."""
    bits = np.asarray(bits, dtype=np.uint8)
    return bits | (rng.random(bits.shape) < p).astype(np.uint8)


def random_subset(bits: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    """Elementwise subset of ``bits`` dropping each present entry with probability ``p``."""
    bits = np.asarray(bits, dtype=np.uint8)
    return bits & (rng.random(bits.shape) >= p).astype(np.uint8)


def as_model(bits: np.ndarray, label: Optional[str] = None) -> BehaviorMatrix:
    return BehaviorMatrix(np.asarray(bits, dtype=np.uint8), label)
