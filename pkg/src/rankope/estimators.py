"""Importance-weighting estimators of position-wise ranking policy values.

Every estimator here is an instance of the same form

.. math::

    \\hat{V}_k = \\frac{1}{n} \\sum_i \\frac{\\pi(\\Phi_k(a_i, c_i) | x_i)}{\\pi_0(\\Phi_k(a_i, c_i) | x_i)} r_{i,k},

and differs only in which behavior matrix ``c_i`` selects the positions that
enter the weight: all positions (IPS), the own position (IIPS), the top-k
prefix (RIPS), a fixed matrix, or a per-record matrix (AIPS).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .behavior import BehaviorMatrix, canonical_model
from .core import FactoredPolicy, RankingDataset
from .exceptions import ConfigError, DimensionError, MissingLatentError, SupportViolationError

SOURCES = ("true_latent", "fixed_model", "tree")


@dataclass(frozen=True)
class PositionEstimate:
    value: float
    k: int
    n_used: int


@dataclass(frozen=True)
class BehaviorAssignment:
    """Per-context behavior matrix used by AIPS.

    Parameters
    ----------
    resolver: callable or None
        Maps an ``(n, d)`` context array to ``(n, K, K)`` bits. Unused for
        ``source="true_latent"``, which reads the dataset's latent matrices.
    source: str
        One of ``true_latent``, ``fixed_model`` or ``tree``.
    """

    resolver: Optional[Callable[[np.ndarray], np.ndarray]]
    source: str

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ConfigError(f"unknown assignment source {self.source!r}")
        if self.source != "true_latent" and self.resolver is None:
            raise ConfigError("a resolver is required unless source is true_latent")

    @classmethod
    def true_latent(cls) -> "BehaviorAssignment":
        return cls(None, "true_latent")

    @classmethod
    def fixed(cls, model: BehaviorMatrix) -> "BehaviorAssignment":
        bits = model.bits

        def resolver(contexts: np.ndarray) -> np.ndarray:
            return np.broadcast_to(bits, (len(contexts),) + bits.shape)

        return cls(resolver, "fixed_model")

    @classmethod
    def from_tree(cls, tree) -> "BehaviorAssignment":
        return cls(tree.resolve_bits, "tree")

    def bits_for(self, dataset: RankingDataset) -> np.ndarray:
        if self.source == "true_latent":
            if dataset.latent_behavior is None:
                raise MissingLatentError("dataset was not sampled in oracle-visible mode")
            return dataset.latent_behavior
        bits = np.asarray(self.resolver(dataset.contexts))
        K = dataset.ranking_size
        if bits.shape != (dataset.n, K, K):
            raise DimensionError(f"resolver returned shape {bits.shape}, expected {(dataset.n, K, K)}")
        return bits


def logged_ratios(dataset: RankingDataset, policy: FactoredPolicy, logging_policy: FactoredPolicy) -> np.ndarray:
    """``(n, K)`` per-position ratios ``pi(a_il | x_i) / pi_0(a_il | x_i)``."""
    num = policy.chosen_probs(dataset.contexts, dataset.actions)
    den = logging_policy.chosen_probs(dataset.contexts, dataset.actions)
    if np.any(den <= 0.0):
        i, l = np.argwhere(den <= 0.0)[0]
        raise SupportViolationError(f"logging policy gives zero probability to record {i}, position {l}")
    return num / den


def subset_weights(ratios: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Product of the ratios at positions flagged in ``rows``.

    ``rows`` is an ``(n, K)`` (or ``(K,)``) 0/1 mask, the k-th row of each
    record's behavior matrix. Unflagged positions contribute a factor of one.
    """
    return np.where(np.asarray(rows, dtype=bool), ratios, 1.0).prod(axis=1)


def position_terms(ratios: np.ndarray, rewards: np.ndarray, k: int, rows: np.ndarray) -> np.ndarray:
    """Per-record weighted rewards ``w_i * r_{i,k}``."""
    return subset_weights(ratios, rows) * rewards[:, k]


def _check_position(dataset: RankingDataset, k: int) -> None:
    if not 0 <= k < dataset.ranking_size:
        raise DimensionError(f"position {k} outside [0, {dataset.ranking_size})")


def _estimate(dataset, policy, logging_policy, k, rows) -> PositionEstimate:
    _check_position(dataset, k)
    ratios = logged_ratios(dataset, policy, logging_policy)
    terms = position_terms(ratios, dataset.rewards, k, rows)
    return PositionEstimate(float(np.mean(terms)), k, dataset.n)


def estimate_with_model(
    dataset: RankingDataset,
    policy: FactoredPolicy,
    logging_policy: FactoredPolicy,
    k: int,
    model: BehaviorMatrix,
) -> PositionEstimate:
    """Weights over the positions ``{l : model[k, l] = 1}`` for every record."""
    if model.ranking_size != dataset.ranking_size:
        raise DimensionError("model size does not match the ranking length")
    _check_position(dataset, k)
    return _estimate(dataset, policy, logging_policy, k, model.bits[k])


def estimate_ips(dataset, policy, logging_policy, k: int) -> PositionEstimate:
    """Ranking-wise weight ``pi(a|x) / pi_0(a|x)``."""
    return estimate_with_model(dataset, policy, logging_policy, k, canonical_model("standard", dataset.ranking_size))


def estimate_iips(dataset, policy, logging_policy, k: int) -> PositionEstimate:
    """Position-wise weight ``pi(a_k|x) / pi_0(a_k|x)``."""
    return estimate_with_model(dataset, policy, logging_policy, k, canonical_model("independence", dataset.ranking_size))


def estimate_rips(dataset, policy, logging_policy, k: int) -> PositionEstimate:
    """Top-k weight ``pi(a_{1:k}|x) / pi_0(a_{1:k}|x)``."""
    return estimate_with_model(dataset, policy, logging_policy, k, canonical_model("cascade", dataset.ranking_size))


def estimate_aips(
    dataset: RankingDataset,
    policy: FactoredPolicy,
    logging_policy: FactoredPolicy,
    k: int,
    assignment: BehaviorAssignment,
) -> PositionEstimate:
    """Adaptive weights: record ``i`` uses row ``k`` of its own resolved matrix."""
    _check_position(dataset, k)
    bits = assignment.bits_for(dataset)
    return _estimate(dataset, policy, logging_policy, k, bits[:, k, :])
