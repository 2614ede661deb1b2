"""Action-reward interaction matrices and the context-dependent behavior distribution.

Entry ``(k, l)`` of a behavior matrix is 1 when the reward at position ``k``
depends on the action at position ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax

from .exceptions import ConfigError, DimensionError

MODEL_NAMES = ("S", "C", "I", "C1", "C2", "I1", "R3", "R6")


@dataclass(frozen=True, eq=False)
class BehaviorMatrix:
    """Binary K x K interaction matrix with an optional model label."""

    bits: np.ndarray
    label: Optional[str] = None

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise DimensionError(f"behavior matrix must be square, got {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("behavior matrix entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def ranking_size(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BehaviorMatrix):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes()) ^ hash(self.bits.shape)

    def __repr__(self) -> str:
        rows = ",".join("".join(str(v) for v in row) for row in self.bits)
        return f"BehaviorMatrix({self.label or '?'}: {rows})"

    def issubset(self, other: "BehaviorMatrix") -> bool:
        """Elementwise containment ``self[k, l] <= other[k, l]``."""
        return bool(np.all(self.bits <= other.bits))

    def flat(self) -> str:
        return "".join(str(v) for v in self.bits.ravel())

    @classmethod
    def from_flat(cls, flat: str, label: Optional[str] = None) -> "BehaviorMatrix":
        K = int(round(len(flat) ** 0.5))
        if K * K != len(flat):
            raise DimensionError(f"flattened matrix length {len(flat)} is not a square")
        return cls(np.array([int(ch) for ch in flat], dtype=np.uint8).reshape(K, K), label)


def canonical_model(kind: str, K: int) -> BehaviorMatrix:
    """One of the three basic models: ``standard``, ``cascade`` or ``independence``."""
    if K < 1:
        raise ConfigError("ranking size must be at least 1")
    kind = kind.lower()
    if kind in ("standard", "s"):
        return BehaviorMatrix(np.ones((K, K), dtype=np.uint8), "S")
    if kind in ("cascade", "c"):
        return BehaviorMatrix(np.tril(np.ones((K, K), dtype=np.uint8)), "C")
    if kind in ("independence", "i"):
        return BehaviorMatrix(np.eye(K, dtype=np.uint8), "I")
    raise ConfigError(f"unknown canonical model {kind!r}")


def neighbor_perturbation(h: int, K: int) -> BehaviorMatrix:
    """Band matrix with ones wherever ``|l - k| <= h``."""
    if h < 0:
        raise ConfigError("neighbor bandwidth must be non-negative")
    idx = np.arange(K)
    return BehaviorMatrix((np.abs(idx[:, None] - idx[None, :]) <= h).astype(np.uint8), f"N{h}")


def random_perturbation(h: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Per row, ``min(h, K-1)`` off-diagonal ones at uniformly chosen positions."""
    bits = np.zeros((K, K), dtype=np.uint8)
    m = min(h, K - 1)
    for k in range(K):
        others = np.array([l for l in range(K) if l != k], dtype=np.int64)
        if m > 0:
            bits[k, rng.choice(others, size=m, replace=False)] = 1
    return bits


def composite_model(kind: str, K: int, rng: Optional[np.random.Generator] = None) -> BehaviorMatrix:
    """Perturbed models C1, C2, I1 (band OR base) and R3, R6 (random OR identity)."""
    kind = kind.upper()
    if kind in ("C1", "C2", "I1"):
        base = canonical_model(kind[0], K).bits
        band = neighbor_perturbation(int(kind[1]), K).bits
        return BehaviorMatrix(base | band, kind)
    if kind in ("R3", "R6"):
        if rng is None:
            raise ConfigError(f"{kind} needs a random generator")
        rand = random_perturbation(int(kind[1]), K, rng)
        return BehaviorMatrix(np.eye(K, dtype=np.uint8) | rand, kind)
    raise ConfigError(f"unknown composite model {kind!r}")


def model_from_name(name: str, K: int, rng: Optional[np.random.Generator] = None) -> BehaviorMatrix:
    """Build any named model in ``MODEL_NAMES``."""
    upper = name.upper()
    if upper in ("S", "C", "I"):
        return canonical_model(upper, K)
    if upper in ("C1", "C2", "I1", "R3", "R6"):
        return composite_model(upper, K, rng)
    raise ConfigError(f"unknown behavior model {name!r}; expected one of {MODEL_NAMES}")


class BehaviorDistribution:
    """Softmax distribution over a finite list of behavior models.

    ``p(c_z | x) = softmax_z(lambda_z * |theta_z^T x|)`` with
    ``lambda_z = exp((2 * delta - 1) * gamma_z)``.  Passing ``lam`` fixes
    every ``lambda_z`` to that constant instead.
    """

    def __init__(
        self,
        models: Sequence[BehaviorMatrix],
        gammas: Sequence[float],
        thetas: np.ndarray,
        delta: float,
        lam: Optional[float] = None,
    ) -> None:
        if len(models) == 0:
            raise ConfigError("behavior distribution needs at least one model")
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if len(gammas) != len(models) or thetas.shape[0] != len(models):
            raise DimensionError("models, gammas and thetas must have the same length")
        if not 0.0 <= delta <= 1.0:
            raise ConfigError("delta must lie in [0, 1]")
        self.models = tuple(models)
        self.gammas = np.asarray(gammas, dtype=float)
        self.thetas = thetas
        self.delta = float(delta)
        self.lam = lam

    @property
    def lambdas(self) -> np.ndarray:
        if self.lam is not None:
            return np.full(len(self.models), float(self.lam))
        return np.exp((2.0 * self.delta - 1.0) * self.gammas)

    @property
    def stacked_bits(self) -> np.ndarray:
        return np.stack([m.bits for m in self.models])

    def logits(self, contexts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        if x.shape[1] != self.thetas.shape[1]:
            raise DimensionError("context dimension does not match behavior parameters")
        return self.lambdas[None, :] * np.abs(x @ self.thetas.T)

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        """``(n, Z)`` model probabilities for a batch of contexts."""
        return softmax(self.logits(contexts), axis=1)

    def sample_indices(self, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        probs = self.probs(contexts)
        u = rng.random(probs.shape[0])
        idx = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
        return np.minimum(idx, len(self.models) - 1)


class PartitionBehavior:
    """Deterministic behavior chosen by thresholding one context feature.

    Contexts with ``x[feature] <= threshold`` follow ``models[0]``, the rest
    ``models[1]``.  Exposes the same ``probs``/``sample_indices`` surface as
    :class:`BehaviorDistribution`, so environments accept either.
    """

    def __init__(self, models: Sequence[BehaviorMatrix], feature: int = 0, threshold: float = 0.0) -> None:
        if len(models) != 2:
            raise ConfigError("a partition behavior needs exactly two models")
        self.models = tuple(models)
        self.feature = int(feature)
        self.threshold = float(threshold)

    @property
    def stacked_bits(self) -> np.ndarray:
        return np.stack([m.bits for m in self.models])

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        right = (x[:, self.feature] > self.threshold).astype(float)
        return np.stack([1.0 - right, right], axis=1)

    def sample_indices(self, contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        return (x[:, self.feature] > self.threshold).astype(np.int64)


def sample_probs(dist, context) -> np.ndarray:
    """Model probabilities for a single context (or a batch)."""
    x = np.asarray(context, dtype=float)
    probs = dist.probs(np.atleast_2d(x))
    return probs[0] if x.ndim == 1 else probs


def sample_behavior(dist, context, rng: np.random.Generator) -> BehaviorMatrix:
    """Draw one behavior matrix for ``context``."""
    idx = dist.sample_indices(np.atleast_2d(np.asarray(context, dtype=float)), rng)
    return dist.models[int(idx[0])]
