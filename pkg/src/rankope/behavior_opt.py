"""Tree-based optimisation of context-dependent behavior-model assignments.

The tree greedily partitions the context space with random axis-aligned
splits and assigns one candidate behavior matrix per leaf, accepting a split
only when the estimated MSE of the resulting AIPS estimator on the node
strictly decreases.
"""
from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .behavior import BehaviorMatrix
from .core import FactoredPolicy, RankingDataset
from .estimators import logged_ratios, position_terms
from .exceptions import CapacityError, ConfigError, DimensionError, InsufficientDataError, OracleUnavailableError
from .synthetic import ENUMERATION_LIMIT, SyntheticEnvironment, conditional_position_value, expected_rewards

DEFAULT_RANDOM_STATES = 10
DEFAULT_MIN_LEAF = 50


@dataclass(frozen=True)
class MseEstimate:
    bias_hat: float
    variance_hat: float
    mse_hat: float

    def __post_init__(self) -> None:
        if abs(self.mse_hat - (self.bias_hat**2 + self.variance_hat)) > 1e-12 * max(1.0, abs(self.mse_hat)):
            raise ValueError("mse_hat must equal bias_hat**2 + variance_hat")

    @classmethod
    def from_parts(cls, bias_hat: float, variance_hat: float) -> "MseEstimate":
        return cls(float(bias_hat), float(variance_hat), float(bias_hat) ** 2 + float(variance_hat))


class CandidateSet(tuple):
    """Non-empty ordered tuple of distinct, equally sized behavior matrices."""

    def __new__(cls, models: Sequence[BehaviorMatrix]):
        models = tuple(models)
        if not models:
            raise ConfigError("candidate set must not be empty")
        if len({m.ranking_size for m in models}) != 1:
            raise DimensionError("candidate models must share the ranking size")
        if len(set(models)) != len(models):
            raise ConfigError("candidate models must be distinct")
        return super().__new__(cls, models)

    @property
    def stacked_bits(self) -> np.ndarray:
        return np.stack([m.bits for m in self])


def sample_variance(terms: np.ndarray) -> float:
    """Unbiased (n-1) sample variance; a single observation has variance 0."""
    terms = np.asarray(terms, dtype=float)
    if terms.size == 0:
        raise InsufficientDataError("sample variance of an empty subset is undefined")
    if terms.size == 1:
        return 0.0
    return float(np.var(terms, ddof=1))


def surrogate_mse(
    subset: RankingDataset,
    model: BehaviorMatrix,
    policy: FactoredPolicy,
    logging_policy: FactoredPolicy,
    k: int,
    bias_estimator,
) -> MseEstimate:
    """Squared estimated bias plus the sample variance of the estimate.

    ``bias_estimator(subset, model, policy, logging_policy, k)`` returns the
    bias estimate; the variance term is the sample variance of the per-record
    weighted rewards divided by the subset size.
    """
    if subset.n == 0:
        raise InsufficientDataError("surrogate MSE of an empty subset is undefined")
    ratios = logged_ratios(subset, policy, logging_policy)
    terms = position_terms(ratios, subset.rewards, k, model.bits[k])
    bias = float(bias_estimator(subset, model, policy, logging_policy, k))
    return MseEstimate.from_parts(bias, sample_variance(terms) / subset.n)


def mixed_position_probs(policy_probs: np.ndarray, logging_probs: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Positions flagged in ``row`` follow the evaluation policy, the rest the logging policy."""
    mask = np.asarray(row, dtype=bool)[None, :, None]
    return np.where(mask, policy_probs, logging_probs)


def per_record_bias(
    env: SyntheticEnvironment,
    contexts: np.ndarray,
    policy_probs: np.ndarray,
    logging_probs: np.ndarray,
    k: int,
    models: Sequence[BehaviorMatrix],
) -> np.ndarray:
    """``(J, n)`` exact conditional bias of the weighted reward for each model.

    Under a factored logging policy, weighting the positions in row ``k`` of a
    model turns their action distribution into the evaluation policy's, so the
    expected weighted reward is a closed-form value under a mixed policy.
    """
    model_probs = env.behavior.probs(contexts)
    truth = conditional_position_value(env, contexts, policy_probs, k, model_probs)
    out = np.empty((len(models), len(contexts)))
    for j, model in enumerate(models):
        mu = mixed_position_probs(policy_probs, logging_probs, model.bits[k])
        out[j] = conditional_position_value(env, contexts, mu, k, model_probs) - truth
    return out


BIAS_MODES = ("estimate", "expected")
NOISE_SCOPES = ("model", "evaluation")


def record_bias_terms(
    env: SyntheticEnvironment,
    dataset: RankingDataset,
    policy: FactoredPolicy,
    logging_policy: FactoredPolicy,
    k: int,
    models: Sequence[BehaviorMatrix],
    mode: str = "estimate",
) -> np.ndarray:
    """``(J, n)`` per-record terms whose subset mean is the on-policy bias of each model.

    ``estimate``: weighted reward minus the on-policy value of the record's
    context, so the subset mean is the AIPS estimate on the subset minus the
    on-policy value there. ``expected``: the exact conditional bias, free of
    reward and action sampling.
    """
    if mode not in BIAS_MODES:
        raise ConfigError(f"unknown bias mode {mode!r}; expected one of {BIAS_MODES}")
    x = dataset.contexts
    pi, pi0 = policy.prob_table(x), logging_policy.prob_table(x)
    if mode == "expected":
        return per_record_bias(env, x, pi, pi0, k, models)
    ratios = logged_ratios(dataset, policy, logging_policy)
    on_policy = conditional_position_value(env, x, pi, k)
    return np.stack([position_terms(ratios, dataset.rewards, k, m.bits[k]) - on_policy for m in models])


def noisy_onpolicy_bias(
    subset: RankingDataset,
    model: BehaviorMatrix,
    policy: FactoredPolicy,
    logging_policy: FactoredPolicy,
    k: int,
    env: Optional[SyntheticEnvironment],
    rng: np.random.Generator,
    noise_scale: float = 0.3,
    mode: str = "estimate",
) -> float:
    """On-policy bias of AIPS with ``model`` on the subset, plus multiplicative Gaussian noise.

    The noise-free value is the model's AIPS estimate on the subset minus the
    exact on-policy value averaged over the subset's contexts (``mode`` selects
    the exact expected bias instead). The returned draw is
    ``N(bias_on, (noise_scale * |bias_on|)^2)``.
    """
    if env is None:
        raise OracleUnavailableError("noisy on-policy bias needs the synthetic environment")
    if noise_scale < 0:
        raise ConfigError("noise_scale must be non-negative")
    if subset.n == 0:
        raise InsufficientDataError("bias of an empty subset is undefined")
    bias_on = float(record_bias_terms(env, subset, policy, logging_policy, k, [model], mode)[0].mean())
    return float(rng.normal(bias_on, noise_scale * abs(bias_on)))


@dataclass
class NodeStats:
    """Per-candidate sufficient statistics of one group of records."""

    count: int
    s1: np.ndarray
    s2: np.ndarray
    bias_sum: np.ndarray
    # summed exact per-record variances; None means use the sample variance
    var_sum: Optional[np.ndarray] = None

    def variance_of_mean(self) -> np.ndarray:
        if self.var_sum is not None:
            return self.var_sum / self.count**2
        return _variance_of_mean(self.count, self.s1, self.s2)


def _variance_of_mean(count, s1, s2):
    """Sample variance (n-1) from running sums, divided by the count."""
    if count <= 1:
        return np.zeros_like(s1)
    return np.maximum(s2 - s1**2 / count, 0.0) / (count - 1) / count


class NodeScorer:
    """Scores assignments of candidates to record groups within one dataset.

    ``terms`` holds each candidate's per-record weighted rewards and
    ``bias_fn(idx)`` the per-candidate bias summed over the records ``idx``.
    ``noise_fn(bias, rng)`` perturbs a group's per-candidate bias vector.
    ``record_var`` (``(J, n)``), when given, replaces the sample variance with
    known per-record variances.
    """

    def __init__(self, terms: np.ndarray, bias_fn, noise_fn=None, record_var: Optional[np.ndarray] = None) -> None:
        self.terms = np.asarray(terms, dtype=float)
        self.terms_sq = self.terms**2
        self._bias_fn = bias_fn
        self._noise_fn = noise_fn
        self.record_var = None if record_var is None else np.asarray(record_var, dtype=float)

    @property
    def num_candidates(self) -> int:
        return self.terms.shape[0]

    def stats(self, idx: np.ndarray) -> NodeStats:
        t = self.terms[:, idx]
        var_sum = None if self.record_var is None else self.record_var[:, idx].sum(axis=1)
        return NodeStats(len(idx), t.sum(axis=1), self.terms_sq[:, idx].sum(axis=1), self._bias_fn(idx), var_sum)

    def group_bias(self, st: NodeStats, rng: np.random.Generator) -> np.ndarray:
        bias = st.bias_sum / st.count
        return self._noise_fn(bias, rng) if self._noise_fn is not None else bias

    def single(self, st: NodeStats, rng: np.random.Generator):
        """``(bias, variance, mse)`` arrays of shape ``(J,)``, one model for the whole group."""
        bias = self.group_bias(st, rng)
        var = st.variance_of_mean()
        return bias, var, bias**2 + var

    def pair(self, left: NodeStats, right: NodeStats, rng: np.random.Generator, aggregation: str = "weighted"):
        """``(J, J)`` scores for model ``j`` on the left group and ``m`` on the right.

        ``weighted`` averages the two children's own surrogate MSEs with
        record-count weights. ``pooled`` scores the single AIPS estimate over
        both groups: record-weighted bias and pooled sample variance.
        """
        count = left.count + right.count
        if aggregation == "weighted":
            mse_l = self.single(left, rng)[2]
            mse_r = self.single(right, rng)[2]
            return (left.count * mse_l[:, None] + right.count * mse_r[None, :]) / count
        if aggregation != "pooled":
            raise ConfigError(f"unknown aggregation {aggregation!r}")
        bias = (left.count * self.group_bias(left, rng)[:, None] + right.count * self.group_bias(right, rng)[None, :]) / count
        if self.record_var is not None:
            return bias**2 + (left.var_sum[:, None] + right.var_sum[None, :]) / count**2
        s1 = left.s1[:, None] + right.s1[None, :]
        s2 = left.s2[:, None] + right.s2[None, :]
        return bias**2 + _variance_of_mean(count, s1, s2)


class MseEstimator(ABC):
    """Pluggable MSE estimate for AIPS with a given behavior model.

    Subclasses supply :meth:`bias`; the variance part is always the sample
    variance of the weighted rewards.
    """

    @abstractmethod
    def bias(self, subset, model, policy, logging_policy, k, rng=None) -> float:
        raise NotImplementedError

    def estimate(self, subset, model, policy, logging_policy, k, rng=None) -> MseEstimate:
        def bias_fn(s, m, p, p0, kk):
            return self.bias(s, m, p, p0, kk, rng)

        return surrogate_mse(subset, model, policy, logging_policy, k, bias_fn)

    def bind(self, dataset, candidates, policy, logging_policy, k, rng=None) -> NodeScorer:
        """Scorer over ``dataset`` for the candidate set (generic fallback)."""
        ratios = logged_ratios(dataset, policy, logging_policy)
        terms = np.stack([position_terms(ratios, dataset.rewards, k, m.bits[k]) for m in candidates])

        def bias_fn(idx):
            sub = dataset.subset(idx)
            return np.array([self.bias(sub, m, policy, logging_policy, k, rng) for m in candidates]) * len(idx)

        return NodeScorer(terms, bias_fn)


class NoisyOracleMse(MseEstimator):
    """Synthetic-oracle bias with multiplicative Gaussian noise.

    ``noise_scale = 0`` gives the noise-free oracle. ``mode="estimate"`` uses
    the realized AIPS estimate minus the on-policy value as the bias;
    ``mode="expected"`` uses the exact expected bias.

    ``noise_scope`` sets how the relative noise is shared when scoring a
    tree: ``model`` draws one standard-normal factor per candidate per fit,
    so every subset's bias for that candidate carries the same relative
    error; ``evaluation`` draws afresh for every group scored.
    """

    def __init__(
        self,
        env: Optional[SyntheticEnvironment],
        noise_scale: float = 0.3,
        mode: str = "estimate",
        noise_scope: str = "model",
    ) -> None:
        if env is None:
            raise OracleUnavailableError("the oracle MSE estimator needs the synthetic environment")
        if noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        if mode not in BIAS_MODES:
            raise ConfigError(f"unknown bias mode {mode!r}; expected one of {BIAS_MODES}")
        if noise_scope not in NOISE_SCOPES:
            raise ConfigError(f"unknown noise scope {noise_scope!r}; expected one of {NOISE_SCOPES}")
        self.env = env
        self.noise_scale = float(noise_scale)
        self.mode = mode
        self.noise_scope = noise_scope

    def bias(self, subset, model, policy, logging_policy, k, rng=None) -> float:
        rng = rng if rng is not None else np.random.default_rng(0)
        return noisy_onpolicy_bias(subset, model, policy, logging_policy, k, self.env, rng, self.noise_scale, self.mode)

    def bind(self, dataset, candidates, policy, logging_policy, k, rng=None) -> NodeScorer:
        ratios = logged_ratios(dataset, policy, logging_policy)
        terms = np.stack([position_terms(ratios, dataset.rewards, k, m.bits[k]) for m in candidates])
        record_bias = record_bias_terms(self.env, dataset, policy, logging_policy, k, candidates, self.mode)

        def bias_fn(idx):
            return record_bias[:, idx].sum(axis=1)

        scale = self.noise_scale
        if scale == 0.0:
            return NodeScorer(terms, bias_fn)
        if self.noise_scope == "model":
            rng = rng if rng is not None else np.random.default_rng(0)
            z = rng.standard_normal(len(candidates))

            def noise_fn(bias, rng_):
                return bias + scale * np.abs(bias) * z

        else:

            def noise_fn(bias, rng_):
                return bias + scale * np.abs(bias) * rng_.standard_normal(np.shape(bias))

        return NodeScorer(terms, bias_fn, noise_fn)


def per_record_variance(
    env: SyntheticEnvironment,
    contexts: np.ndarray,
    policy_probs: np.ndarray,
    logging_probs: np.ndarray,
    k: int,
    models: Sequence[BehaviorMatrix],
    limit: int = ENUMERATION_LIMIT,
) -> np.ndarray:
    """``(J, n)`` exact conditional variance of each model's weighted reward.

    Enumerates all ``|A|^K`` rankings, so it is limited to small instances.
    The variance is over behavior, ranking and reward noise given the context.
    """
    A, K = env.num_actions, env.ranking_size
    if A**K > limit:
        raise CapacityError(f"|A|^K = {A**K} exceeds the enumeration limit {limit}")
    n = len(contexts)
    model_probs = env.behavior.probs(contexts)
    true_bits = env.behavior.stacked_bits
    rows = np.stack([m.bits[k] for m in models]).astype(bool)  # (J, K)
    first = np.zeros((len(models), n))
    second = np.zeros((len(models), n))
    positions = np.arange(K)
    for ranking in itertools.product(range(A), repeat=K):
        ranking = np.asarray(ranking)
        p_pi = policy_probs[:, positions, ranking]  # (n, K)
        p_0 = logging_probs[:, positions, ranking]
        joint0 = p_0.prod(axis=1)
        ratio = p_pi / p_0
        w = np.where(rows[:, None, :], ratio[None], 1.0).prod(axis=2)  # (J, n)
        actions = np.broadcast_to(ranking, (n, K))
        for z, bits in enumerate(true_bits):
            q = expected_rewards(env, contexts, actions, bits)[:, k]
            pz = model_probs[:, z] * joint0
            first += pz * w * q
            second += pz * w**2 * (q**2 + env.sigma**2)
    return np.maximum(second - first**2, 0.0)


class ExactOracleMse(MseEstimator):
    """Noise-free oracle: exact conditional bias and exact conditional variance.

    Scores the MSE of the AIPS estimate given the subset's contexts, with no
    sampling error in either term. Needs enumerable ``|A|^K``.
    """

    def __init__(self, env: Optional[SyntheticEnvironment]) -> None:
        if env is None:
            raise OracleUnavailableError("the exact oracle MSE estimator needs the synthetic environment")
        self.env = env

    def bias(self, subset, model, policy, logging_policy, k, rng=None) -> float:
        x = subset.contexts
        return float(per_record_bias(self.env, x, policy.prob_table(x), logging_policy.prob_table(x), k, [model])[0].mean())

    def estimate(self, subset, model, policy, logging_policy, k, rng=None) -> MseEstimate:
        if subset.n == 0:
            raise InsufficientDataError("MSE of an empty subset is undefined")
        x = subset.contexts
        pi, pi0 = policy.prob_table(x), logging_policy.prob_table(x)
        bias = float(per_record_bias(self.env, x, pi, pi0, k, [model])[0].mean())
        var = float(per_record_variance(self.env, x, pi, pi0, k, [model])[0].sum()) / subset.n**2
        return MseEstimate.from_parts(bias, var)

    def bind(self, dataset, candidates, policy, logging_policy, k, rng=None) -> NodeScorer:
        x = dataset.contexts
        pi, pi0 = policy.prob_table(x), logging_policy.prob_table(x)
        ratios = logged_ratios(dataset, policy, logging_policy)
        terms = np.stack([position_terms(ratios, dataset.rewards, k, m.bits[k]) for m in candidates])
        record_bias = per_record_bias(self.env, x, pi, pi0, k, candidates)
        record_var = per_record_variance(self.env, x, pi, pi0, k, candidates)

        def bias_fn(idx):
            return record_bias[:, idx].sum(axis=1)

        return NodeScorer(terms, bias_fn, record_var=record_var)


@dataclass
class TreeNode:
    node_id: int
    depth: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional[int] = None
    right: Optional[int] = None
    model_index: Optional[int] = None
    leaf_id: Optional[int] = None
    n_records: int = 0
    mse_hat: float = float("nan")

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(frozen=True)
class FitLogRow:
    node_id: int
    feature: int
    threshold: float
    left_model: str
    right_model: str
    mse_hat: float
    parent_mse: float
    accepted: bool


@dataclass
class BehaviorTree:
    """Axis-aligned partition of the context space with one model per leaf.

    Contexts with ``x[feature] <= threshold`` go left.
    """

    candidates: CandidateSet
    nodes: list
    fit_log: list = field(default_factory=list)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def leaves(self) -> list:
        return sorted((nd for nd in self.nodes if nd.is_leaf), key=lambda nd: nd.leaf_id)

    def leaf_ids(self, contexts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        out = np.full(x.shape[0], -1, dtype=np.int64)
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            node_id, idx = stack.pop()
            node = self.nodes[node_id]
            if node.is_leaf:
                out[idx] = node.leaf_id
                continue
            go_left = x[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def model_indices(self, contexts: np.ndarray) -> np.ndarray:
        by_leaf = {nd.leaf_id: nd.model_index for nd in self.nodes if nd.is_leaf}
        lookup = np.array([by_leaf[g] for g in range(len(by_leaf))], dtype=np.int64)
        return lookup[self.leaf_ids(contexts)]

    def resolve_bits(self, contexts: np.ndarray) -> np.ndarray:
        return self.candidates.stacked_bits[self.model_indices(contexts)]

    def resolve(self, context) -> BehaviorMatrix:
        return self.candidates[int(self.model_indices(np.atleast_2d(context))[0])]


def resolve(tree: BehaviorTree, context) -> BehaviorMatrix:
    return tree.resolve(context)


def _label(model: BehaviorMatrix, j: int) -> str:
    return model.label or f"cand{j}"


def fit_tree(
    dataset: RankingDataset,
    candidates: Sequence[BehaviorMatrix],
    mse_estimator: MseEstimator,
    policy: FactoredPolicy,
    logging_policy: FactoredPolicy,
    k: int,
    random_states: int = DEFAULT_RANDOM_STATES,
    min_leaf: int = DEFAULT_MIN_LEAF,
    seed=None,
    max_depth: Optional[int] = None,
    scorer: Optional[NodeScorer] = None,
    aggregation: str = "weighted",
) -> BehaviorTree:
    """Greedy behavior-assignment tree for position ``k``.

    Nodes are expanded first-in first-out. For every node the best single
    candidate is found; then ``random_states`` random splits are drawn (a
    uniformly random feature, a threshold drawn from that feature's values in
    the node) and, for each, the best pair of distinct candidates for the two
    children. The best split is kept only if its score is strictly below the
    node's best single-model score; otherwise the node becomes a leaf. Splits
    leaving fewer than ``min_leaf`` records on either side are rejected.

    Two-child scores aggregate per ``aggregation`` (see :meth:`NodeScorer.pair`).
    ``seed`` drives both split generation and any noise inside the MSE
    estimator, so the fit is reproducible.
    """
    candidates = candidates if isinstance(candidates, CandidateSet) else CandidateSet(candidates)
    if candidates.stacked_bits.shape[1] != dataset.ranking_size:
        raise DimensionError("candidate size does not match the ranking length")
    if random_states < 0 or min_leaf < 1:
        raise ConfigError("random_states must be >= 0 and min_leaf >= 1")
    if dataset.n < min_leaf:
        raise InsufficientDataError(f"dataset has {dataset.n} records, fewer than min_leaf={min_leaf}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if scorer is None:
        scorer = mse_estimator.bind(dataset, candidates, policy, logging_policy, k, rng)
    J = len(candidates)
    distinct = ~np.eye(J, dtype=bool)
    x = dataset.contexts
    d = dataset.dim_context

    nodes = [TreeNode(0, 0)]
    log: list[FitLogRow] = []
    queue = deque([(0, np.arange(dataset.n))])
    next_leaf = 0
    while queue:
        node_id, idx = queue.popleft()
        node = nodes[node_id]
        node.n_records = len(idx)
        _, _, mse_single = scorer.single(scorer.stats(idx), rng)
        best_model = int(np.argmin(mse_single))
        best_mse = float(mse_single[best_model])
        node.mse_hat = best_mse
        best_split = None
        can_split = max_depth is None or node.depth < max_depth
        for _ in range(random_states if can_split else 0):
            feature = int(rng.integers(d))
            values = x[idx, feature]
            threshold = float(values[rng.integers(len(idx))])
            go_left = values <= threshold
            n_left = int(go_left.sum())
            if n_left < min_leaf or len(idx) - n_left < min_leaf or J < 2:
                continue
            left_idx, right_idx = idx[go_left], idx[~go_left]
            mse_pair = scorer.pair(scorer.stats(left_idx), scorer.stats(right_idx), rng, aggregation)
            mse_pair = np.where(distinct, mse_pair, np.inf)
            jl, jr = np.unravel_index(int(np.argmin(mse_pair)), mse_pair.shape)
            split_mse = float(mse_pair[jl, jr])
            log.append(
                FitLogRow(node_id, feature, threshold, _label(candidates[jl], jl), _label(candidates[jr], jr),
                          split_mse, node.mse_hat, False)
            )
            if best_mse > split_mse:
                best_mse = split_mse
                best_split = (feature, threshold, left_idx, right_idx)
                best_row = len(log) - 1
        if best_split is not None:
            log[best_row] = replace(log[best_row], accepted=True)
        if best_split is None:
            node.model_index = best_model
            node.leaf_id = next_leaf
            next_leaf += 1
            continue
        feature, threshold, left_idx, right_idx = best_split
        node.feature, node.threshold = feature, threshold
        node.left, node.right = len(nodes), len(nodes) + 1
        nodes.append(TreeNode(node.left, node.depth + 1))
        nodes.append(TreeNode(node.right, node.depth + 1))
        queue.append((node.left, left_idx))
        queue.append((node.right, right_idx))
    return BehaviorTree(candidates, nodes, log)
