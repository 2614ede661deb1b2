"""Shared domain types: policies, logged datasets and positioned action subsets.

Positions are 0-based throughout the package. A ranking action is a length-K
integer vector whose entries index the action set ``{0, ..., |A|-1}``;
duplicates are allowed because factored policies sample every position
independently.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .exceptions import DimensionError, SupportViolationError

PROB_TOL = 1e-9

ArrayLike = Union[np.ndarray, Sequence[float]]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def behavior_bits(behavior) -> np.ndarray:
    """Return the 0/1 array behind a behavior matrix (or an array-like)."""
    bits = getattr(behavior, "bits", behavior)
    bits = np.asarray(bits)
    if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
        raise DimensionError(f"behavior matrix must be square, got shape {bits.shape}")
    return bits


@dataclass(frozen=True)
class PositionedSubset:
    """A set of ``(position, action)`` pairs with distinct positions.

    This is the positioned form of the relevant-action set: keeping the
    position of every action makes marginals under factored policies
    well-defined even when an action id appears at several positions.
    """

    positions: tuple[int, ...]
    actions: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.positions) != len(self.actions):
            raise DimensionError("positions and actions must have equal length")
        if len(set(self.positions)) != len(self.positions):
            raise DimensionError("a positioned subset holds at most one entry per position")

    @classmethod
    def from_pairs(cls, pairs) -> "PositionedSubset":
        pairs = sorted((int(p), int(a)) for p, a in pairs)
        return cls(tuple(p for p, _ in pairs), tuple(a for _, a in pairs))

    @classmethod
    def empty(cls) -> "PositionedSubset":
        return cls((), ())

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.positions, self.actions))

    def complement_positions(self, ranking_size: int) -> tuple[int, ...]:
        taken = set(self.positions)
        return tuple(l for l in range(ranking_size) if l not in taken)

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(zip(self.positions, self.actions))


class FactoredPolicy:
    """Context-conditional policy that picks each position independently.

    Parameters
    ----------
    prob_fn: callable
        Maps an ``(n, d)`` context array to an ``(n, K, |A|)`` array of
        per-position action probabilities.
    ranking_size: int
        Length K of the ranking.
    num_actions: int
        Size of the action set.
    name: str, optional
        Label used in reports.
    """

    def __init__(
        self,
        prob_fn: Callable[[np.ndarray], np.ndarray],
        ranking_size: int,
        num_actions: int,
        name: Optional[str] = None,
    ) -> None:
        self._prob_fn = prob_fn
        self.ranking_size = int(ranking_size)
        self.num_actions = int(num_actions)
        self.name = name

    def __repr__(self) -> str:
        return (
            f"FactoredPolicy(name={self.name!r}, K={self.ranking_size}, "
            f"num_actions={self.num_actions})"
        )

    @classmethod
    def from_table(cls, table: ArrayLike, name: Optional[str] = None) -> "FactoredPolicy":
        """Context-independent policy given by a fixed ``(K, |A|)`` table."""
        table = _readonly(np.asarray(table, dtype=float))
        if table.ndim != 2:
            raise DimensionError("table must have shape (K, num_actions)")

        def prob_fn(contexts: np.ndarray) -> np.ndarray:
            return np.broadcast_to(table, (contexts.shape[0],) + table.shape)

        return cls(prob_fn, table.shape[0], table.shape[1], name=name)

    def prob_table(self, contexts: ArrayLike, validate: bool = True) -> np.ndarray:
        """Per-position probabilities.

        A single context (1-d input) yields a ``(K, |A|)`` matrix, a batch of
        contexts an ``(n, K, |A|)`` array.
        """
        x = np.asarray(contexts, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        probs = np.asarray(self._prob_fn(x2), dtype=float)
        if probs.shape != (x2.shape[0], self.ranking_size, self.num_actions):
            raise DimensionError(
                f"policy returned shape {probs.shape}, expected "
                f"{(x2.shape[0], self.ranking_size, self.num_actions)}"
            )
        if validate:
            if np.any(probs < 0):
                raise ValueError("policy probabilities must be non-negative")
            if np.any(np.abs(probs.sum(axis=-1) - 1.0) > PROB_TOL):
                raise ValueError("per-position probabilities must sum to 1")
        return probs[0] if single else probs

    def chosen_probs(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """``(n, K)`` probabilities of the logged action at every position."""
        probs = self.prob_table(contexts)
        actions = np.asarray(actions)
        return np.take_along_axis(probs, actions[:, :, None], axis=2)[:, :, 0]

    def ranking_prob(self, context: ArrayLike, action: Sequence[int]) -> float:
        """Joint probability of a complete ranking under the factored product."""
        table = self.prob_table(context)
        return float(np.prod(table[np.arange(self.ranking_size), np.asarray(action)]))

    def sample(self, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one ranking per context by inverse-CDF sampling at every position."""
        probs = self.prob_table(contexts)
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(probs.shape[:2])
        actions = (u[..., None] >= cdf).sum(axis=-1)
        return np.minimum(actions, self.num_actions - 1)


class JointPolicy:
    """Non-factored policy given by a joint ranking probability.

    Only used for checks; marginals are computed by enumeration over the
    unconstrained positions, so keep ``|A|^K`` small.
    """

    def __init__(self, joint_fn: Callable[[np.ndarray, tuple], float], ranking_size: int, num_actions: int):
        self._joint_fn = joint_fn
        self.ranking_size = int(ranking_size)
        self.num_actions = int(num_actions)

    def ranking_prob(self, context: ArrayLike, action: Sequence[int]) -> float:
        return float(self._joint_fn(np.asarray(context, dtype=float), tuple(int(a) for a in action)))

    def subset_prob(self, context: ArrayLike, subset: PositionedSubset) -> float:
        fixed = dict(subset)
        free = [l for l in range(self.ranking_size) if l not in fixed]
        total = 0.0
        for combo in itertools.product(range(self.num_actions), repeat=len(free)):
            ranking = [0] * self.ranking_size
            for l, a in fixed.items():
                ranking[l] = a
            for l, a in zip(free, combo):
                ranking[l] = a
            total += self.ranking_prob(context, ranking)
        return total


@dataclass(frozen=True)
class LoggedRecord:
    context: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    latent_behavior: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class RankingDataset:
    """Immutable logged bandit data ``{(x_i, a_i, r_i)}``.

    ``latent_behavior`` holds the realised ``(n, K, K)`` behavior matrices
    when the data was sampled in oracle-visible mode, otherwise ``None``.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    num_actions: int
    latent_behavior: Optional[np.ndarray] = None
    logging_policy: Optional[FactoredPolicy] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        contexts = np.asarray(self.contexts, dtype=float)
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=float)
        if contexts.ndim != 2 or actions.ndim != 2 or rewards.ndim != 2:
            raise DimensionError("contexts, actions and rewards must be 2-d arrays")
        n, K = actions.shape
        if contexts.shape[0] != n or rewards.shape != (n, K):
            raise DimensionError(
                f"inconsistent shapes: contexts {contexts.shape}, actions {actions.shape}, "
                f"rewards {rewards.shape}"
            )
        if n and (actions.min() < 0 or actions.max() >= self.num_actions):
            raise DimensionError("action identifiers must lie in [0, num_actions)")
        if not (np.all(np.isfinite(contexts)) and np.all(np.isfinite(rewards))):
            raise ValueError("contexts and rewards must be finite")
        object.__setattr__(self, "contexts", _readonly(contexts))
        object.__setattr__(self, "actions", _readonly(actions))
        object.__setattr__(self, "rewards", _readonly(rewards))
        if self.latent_behavior is not None:
            latent = np.asarray(self.latent_behavior, dtype=np.uint8)
            if latent.shape != (n, K, K):
                raise DimensionError(f"latent behavior must have shape {(n, K, K)}")
            if np.any(latent > 1):
                raise ValueError("behavior matrices are binary")
            object.__setattr__(self, "latent_behavior", _readonly(latent))

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def dim_context(self) -> int:
        return self.contexts.shape[1]

    @property
    def ranking_size(self) -> int:
        return self.actions.shape[1]

    @property
    def oracle_visible(self) -> bool:
        return self.latent_behavior is not None

    def __len__(self) -> int:
        return self.n

    def record(self, i: int) -> LoggedRecord:
        latent = None if self.latent_behavior is None else self.latent_behavior[i]
        return LoggedRecord(self.contexts[i], self.actions[i], self.rewards[i], latent)

    def records(self) -> Iterator[LoggedRecord]:
        for i in range(self.n):
            yield self.record(i)

    def subset(self, index) -> "RankingDataset":
        """Dataset restricted to ``index`` (integer indices or a boolean mask)."""
        index = np.asarray(index)
        latent = None if self.latent_behavior is None else self.latent_behavior[index]
        return RankingDataset(
            self.contexts[index],
            self.actions[index],
            self.rewards[index],
            self.num_actions,
            latent,
            self.logging_policy,
        )

    def without_latent(self) -> "RankingDataset":
        return RankingDataset(self.contexts, self.actions, self.rewards, self.num_actions, None, self.logging_policy)

    @staticmethod
    def concat(datasets: Sequence["RankingDataset"]) -> "RankingDataset":
        first = datasets[0]
        latent = None
        if all(ds.latent_behavior is not None for ds in datasets):
            latent = np.concatenate([ds.latent_behavior for ds in datasets])
        return RankingDataset(
            np.concatenate([ds.contexts for ds in datasets]),
            np.concatenate([ds.actions for ds in datasets]),
            np.concatenate([ds.rewards for ds in datasets]),
            first.num_actions,
            latent,
            first.logging_policy,
        )


def relevant_set(action: Sequence[int], behavior, k: int) -> PositionedSubset:
    """Positioned actions ``{(l, a_l) : c[k, l] = 1}`` relevant to the reward at ``k``."""
    bits = behavior_bits(behavior)
    action = np.asarray(action)
    K = bits.shape[0]
    if action.shape != (K,):
        raise DimensionError(f"action has length {action.shape}, behavior matrix is {K}x{K}")
    if not 0 <= k < K:
        raise DimensionError(f"position {k} outside [0, {K})")
    positions = tuple(int(l) for l in np.flatnonzero(bits[k]))
    return PositionedSubset(positions, tuple(int(action[l]) for l in positions))


def marginal_prob(policy, context: ArrayLike, subset: PositionedSubset) -> float:
    """Probability that ``policy`` places every ``(l, a_l)`` of ``subset``.

    The empty subset has probability one.
    """
    if len(subset) == 0:
        return 1.0
    if any(not 0 <= l < policy.ranking_size for l in subset.positions):
        raise DimensionError("subset position outside the ranking")
    if isinstance(policy, JointPolicy):
        return policy.subset_prob(context, subset)
    table = policy.prob_table(context)
    return float(np.prod(table[list(subset.positions), list(subset.actions)]))


def importance_weight(eval_policy, logging_policy, context: ArrayLike, subset: PositionedSubset) -> float:
    """``pi(subset | x) / pi_0(subset | x)``; raises on a zero logging marginal."""
    denom = marginal_prob(logging_policy, context, subset)
    if denom <= 0.0:
        raise SupportViolationError(
            f"logging policy assigns zero probability to {sorted(subset.pairs())}"
        )
    return marginal_prob(eval_policy, context, subset) / denom
