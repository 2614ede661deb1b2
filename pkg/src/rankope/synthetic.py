"""Synthetic ranking environment: latent parameters, rewards, policies and ground truth."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax

from .behavior import BehaviorDistribution, model_from_name
from .core import FactoredPolicy, RankingDataset
from .exceptions import CapacityError, ConfigError, DimensionError

ENUMERATION_LIMIT = 10**6

DEFAULT_MODELS = ("S", "R6", "R3", "C2", "C1", "I1")
DEFAULT_GAMMAS = (1.5, 0.9, 0.3, -0.3, -0.9, -1.5)


@dataclass(frozen=True)
class EnvConfig:
    d: int = 5
    num_actions: int = 2
    ranking_size: int = 8
    sigma: float = 0.5
    delta: float = 0.6
    epsilon: float = 0.3
    seed: int = 0
    models: tuple = DEFAULT_MODELS
    gammas: tuple = DEFAULT_GAMMAS
    # constant lambda for every behavior model; None means lambda_z from delta/gamma
    lam: Optional[float] = None
    # evaluation policy concentrates on argmax f_0 instead of argmin
    argmax_eval: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "models", tuple(str(m) for m in self.models))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if self.d < 1:
            raise ConfigError("d must be positive")
        if self.num_actions < 2:
            raise ConfigError("num_actions must be at least 2")
        if self.ranking_size < 1:
            raise ConfigError("ranking_size must be at least 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError("delta must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if len(self.models) == 0 or len(self.models) != len(self.gammas):
            raise ConfigError("models and gammas must be non-empty and of equal length")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def with_updates(self, **kwargs) -> "EnvConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True, eq=False)
class SyntheticEnvironment:
    """All latent parameters of one synthetic environment.

    ``behavior`` is any object exposing ``models``, ``probs(contexts)`` and
    ``sample_indices(contexts, rng)``; the default is a
    :class:`~rankope.behavior.BehaviorDistribution`.
    """

    config: EnvConfig
    theta: np.ndarray
    bias: np.ndarray
    W: np.ndarray
    logging_theta: np.ndarray
    logging_bias: np.ndarray
    behavior: object = field(repr=False)

    @property
    def d(self) -> int:
        return self.config.d

    @property
    def num_actions(self) -> int:
        return self.config.num_actions

    @property
    def ranking_size(self) -> int:
        return self.config.ranking_size

    @property
    def sigma(self) -> float:
        return self.config.sigma

    def with_behavior(self, behavior) -> "SyntheticEnvironment":
        """Same reward and policy parameters under a different behavior model."""
        return replace(self, behavior=behavior)


def build_env(config: Optional[EnvConfig] = None, **overrides) -> SyntheticEnvironment:
    """Draw every latent parameter from ``config.seed``.

    Reward parameters ``theta_a, b_a`` are standard normal, ``W`` is uniform on
    ``[0, 1)``, the logging scores ``f_0`` use standard-uniform parameters and
    so do the behavior-model directions ``theta_z``.
    """
    config = (config or EnvConfig()).with_updates(**overrides) if overrides else (config or EnvConfig())
    A, d, K = config.num_actions, config.d, config.ranking_size
    rng = np.random.default_rng(config.seed)
    theta = rng.standard_normal((A, d))
    bias = rng.standard_normal(A)
    W = rng.random((A, A))
    logging_theta = rng.random((A, d))
    logging_bias = rng.random(A)
    models = [model_from_name(name, K, rng) for name in config.models]
    thetas_z = rng.random((len(models), d))
    behavior = BehaviorDistribution(models, config.gammas, thetas_z, config.delta, lam=config.lam)
    for arr in (theta, bias, W, logging_theta, logging_bias):
        arr.setflags(write=False)
    return SyntheticEnvironment(config, theta, bias, W, logging_theta, logging_bias, behavior)


def sample_contexts(env: SyntheticEnvironment, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, env.d))


def base_reward_table(env: SyntheticEnvironment, contexts: np.ndarray) -> np.ndarray:
    """``(n, |A|)`` base rewards ``theta_a^T x + b_a``."""
    x = np.atleast_2d(np.asarray(contexts, dtype=float))
    if x.shape[1] != env.d:
        raise DimensionError(f"contexts have dimension {x.shape[1]}, environment expects {env.d}")
    return x @ env.theta.T + env.bias


def base_reward(env: SyntheticEnvironment, context, action_id: int) -> float:
    if not 0 <= action_id < env.num_actions:
        raise DimensionError(f"action {action_id} outside [0, {env.num_actions})")
    return float(base_reward_table(env, context)[0, action_id])


def expected_reward(env: SyntheticEnvironment, context, action: Sequence[int], behavior, k: int) -> float:
    """``q_k(x, a, c) = c_kk * base(x, a_k) + sum_{l != k} c_kl * W(a_k, a_l)``."""
    bits = np.asarray(getattr(behavior, "bits", behavior))
    action = np.asarray(action)
    if bits.shape != (len(action), len(action)):
        raise DimensionError("behavior matrix does not match the ranking length")
    value = bits[k, k] * base_reward(env, context, int(action[k]))
    for l in range(len(action)):
        if l != k and bits[k, l]:
            value += env.W[action[k], action[l]]
    return float(value)


def expected_rewards(env: SyntheticEnvironment, contexts: np.ndarray, actions: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Vectorised ``q_k`` for every record and position, ``(n, K)``.

    ``bits`` is either one ``(K, K)`` matrix or one matrix per record.
    """
    actions = np.asarray(actions)
    n, K = actions.shape
    bits = np.broadcast_to(np.asarray(bits), (n, K, K))
    base = np.take_along_axis(base_reward_table(env, contexts), actions, axis=1)
    pair = env.W[actions[:, :, None], actions[:, None, :]]
    off = bits * (1 - np.eye(K, dtype=bits.dtype))
    diag = np.diagonal(bits, axis1=1, axis2=2)
    return diag * base + (off * pair).sum(axis=2)


def logging_scores(env: SyntheticEnvironment, contexts: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(contexts, dtype=float))
    return x @ env.logging_theta.T + env.logging_bias


def logging_policy(env: SyntheticEnvironment) -> FactoredPolicy:
    """Softmax of ``f_0`` repeated at every position."""
    K = env.ranking_size

    def prob_fn(contexts: np.ndarray) -> np.ndarray:
        probs = softmax(logging_scores(env, contexts), axis=1)
        return np.repeat(probs[:, None, :], K, axis=1)

    return FactoredPolicy(prob_fn, K, env.num_actions, name="logging")


def evaluation_policy(env: SyntheticEnvironment, epsilon: Optional[float] = None, argmax: Optional[bool] = None) -> FactoredPolicy:
    """``(1 - eps) * 1{a = argmin f_0} + eps / |A|`` at every position.

    ``argmax=True`` swaps argmin for argmax; the default follows the
    environment config.
    """
    eps = env.config.epsilon if epsilon is None else float(epsilon)
    if not 0.0 <= eps <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")
    use_max = env.config.argmax_eval if argmax is None else argmax
    K, A = env.ranking_size, env.num_actions

    def prob_fn(contexts: np.ndarray) -> np.ndarray:
        scores = logging_scores(env, contexts)
        best = scores.argmax(axis=1) if use_max else scores.argmin(axis=1)
        probs = np.full(scores.shape, eps / A)
        probs[np.arange(len(best)), best] += 1.0 - eps
        return np.repeat(probs[:, None, :], K, axis=1)

    return FactoredPolicy(prob_fn, K, A, name=f"eval(eps={eps:g})")


def sample_dataset(
    env: SyntheticEnvironment,
    policy: FactoredPolicy,
    n: int,
    rng: np.random.Generator,
    oracle_visible: bool = True,
) -> RankingDataset:
    """Draw ``n`` logged records: x, then c ~ p(c|x), then a ~ policy, then Gaussian rewards."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    contexts = sample_contexts(env, n, rng)
    model_idx = env.behavior.sample_indices(contexts, rng)
    actions = policy.sample(contexts, rng)
    bits = np.stack([m.bits for m in env.behavior.models])[model_idx]
    q = expected_rewards(env, contexts, actions, bits)
    rewards = q + env.sigma * rng.standard_normal(q.shape)
    return RankingDataset(
        contexts,
        actions,
        rewards,
        env.num_actions,
        latent_behavior=bits if oracle_visible else None,
        logging_policy=policy,
    )


def conditional_position_value(
    env: SyntheticEnvironment,
    contexts: np.ndarray,
    position_probs: np.ndarray,
    k: int,
    model_probs: Optional[np.ndarray] = None,
    model_bits: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Exact ``E[q_k | x]`` when position ``l`` draws its action from ``position_probs[:, l]``.

    Positions are independent under a factored policy, so the expectation of
    every pairwise ``W`` term factorises.  Averages over behavior models with
    ``model_probs`` (defaults to the environment's ``p(c|x)``).
    """
    x = np.atleast_2d(np.asarray(contexts, dtype=float))
    mu = np.asarray(position_probs, dtype=float)
    if mu.ndim == 2:
        mu = np.broadcast_to(mu, (x.shape[0],) + mu.shape)
    K = mu.shape[1]
    if model_bits is None:
        model_bits = np.stack([m.bits for m in env.behavior.models])
    if model_probs is None:
        model_probs = env.behavior.probs(x)
    model_bits = np.asarray(model_bits, dtype=float)
    base = np.einsum("na,na->n", mu[:, k], base_reward_table(env, x))
    pair = np.einsum("na,ab,nlb->nl", mu[:, k], env.W, mu)
    off = model_bits[:, k, :] * (np.arange(K) != k)
    per_model = model_bits[:, k, k][None, :] * base[:, None] + pair @ off.T
    return (np.asarray(model_probs) * per_model).sum(axis=1)


def enumerate_position_value(
    env: SyntheticEnvironment,
    policy: FactoredPolicy,
    k: int,
    context: np.ndarray,
    limit: int = ENUMERATION_LIMIT,
) -> float:
    """Brute-force ``sum_z p(c_z|x) sum_a pi(a|x) q_k(x, a, c_z)`` over all rankings."""
    K, A = env.ranking_size, env.num_actions
    if A**K > limit:
        raise CapacityError(f"|A|^K = {A**K} exceeds the enumeration limit {limit}")
    x = np.asarray(context, dtype=float)
    table = policy.prob_table(x)
    rankings = np.array(list(itertools.product(range(A), repeat=K)), dtype=np.int64)
    probs = table[np.arange(K)[None, :], rankings].prod(axis=1)
    xs = np.broadcast_to(x, (len(rankings), x.size))
    model_probs = env.behavior.probs(x[None, :])[0]
    total = 0.0
    for p_z, model in zip(model_probs, env.behavior.models):
        q = expected_rewards(env, xs, rankings, model.bits)[:, k]
        total += p_z * float(probs @ q)
    return total


def exact_value_per_context(env: SyntheticEnvironment, policy: FactoredPolicy, k: int, contexts: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(contexts, dtype=float))
    return conditional_position_value(env, x, policy.prob_table(x), k)


def exact_value(
    env: SyntheticEnvironment,
    policy: FactoredPolicy,
    k: Optional[int],
    contexts: np.ndarray,
    alpha: Optional[Sequence[float]] = None,
    method: str = "closed_form",
) -> float:
    """Exact conditional policy value averaged over ``contexts``.

    With ``k`` an integer this is ``V_k``; with ``k=None`` the ``alpha``
    weights combine all positions into ``V = sum_k alpha_k V_k``.
    ``method="enumerate"`` sums over every ranking instead of using the
    factorised closed form and is guarded by ``ENUMERATION_LIMIT``.
    """
    x = np.atleast_2d(np.asarray(contexts, dtype=float))
    if k is None:
        if alpha is None:
            raise ConfigError("alpha weights are required when k is None")
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (env.ranking_size,) or np.any(alpha < 0):
            raise ConfigError("alpha must be a non-negative vector of length K")
        return float(sum(a * exact_value(env, policy, j, x, method=method) for j, a in enumerate(alpha)))
    if method == "enumerate":
        if env.num_actions**env.ranking_size > ENUMERATION_LIMIT:
            raise CapacityError("enumeration limit exceeded")
        return float(np.mean([enumerate_position_value(env, policy, k, xi) for xi in x]))
    if method != "closed_form":
        raise ConfigError(f"unknown method {method!r}")
    return float(np.mean(exact_value_per_context(env, policy, k, x)))


@dataclass(frozen=True)
class AlphaWeights:
    alpha: np.ndarray

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 1 or np.any(alpha < 0):
            raise ConfigError("alpha weights must be a non-negative vector")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def dcg(cls, K: int) -> "AlphaWeights":
        """``1 / log2(k + 1)`` for 1-based positions ``k``."""
        return cls(1.0 / np.log2(np.arange(1, K + 1) + 1.0))

    @classmethod
    def uniform(cls, K: int) -> "AlphaWeights":
        return cls(np.ones(K))

    @classmethod
    def preset(cls, name: str, K: int) -> "AlphaWeights":
        if name == "dcg":
            return cls.dcg(K)
        if name == "uniform":
            return cls.uniform(K)
        raise ConfigError(f"unknown alpha preset {name!r}")
