"""Off-policy evaluation of ranking policies with adaptive behavior models."""
from .behavior import (
    BehaviorDistribution,
    BehaviorMatrix,
    PartitionBehavior,
    canonical_model,
    composite_model,
    model_from_name,
)
from .behavior_opt import (
    BehaviorTree,
    CandidateSet,
    ExactOracleMse,
    MseEstimate,
    MseEstimator,
    NoisyOracleMse,
    fit_tree,
)
from .core import FactoredPolicy, JointPolicy, PositionedSubset, RankingDataset, importance_weight, marginal_prob
from .estimators import (
    BehaviorAssignment,
    estimate_aips,
    estimate_iips,
    estimate_ips,
    estimate_rips,
    estimate_with_model,
)
from .synthetic import EnvConfig, build_env, evaluation_policy, exact_value, logging_policy, sample_dataset

__all__ = [
    "BehaviorAssignment",
    "BehaviorDistribution",
    "BehaviorMatrix",
    "BehaviorTree",
    "CandidateSet",
    "EnvConfig",
    "ExactOracleMse",
    "FactoredPolicy",
    "JointPolicy",
    "MseEstimate",
    "MseEstimator",
    "NoisyOracleMse",
    "PartitionBehavior",
    "PositionedSubset",
    "RankingDataset",
    "build_env",
    "canonical_model",
    "composite_model",
    "estimate_aips",
    "estimate_iips",
    "estimate_ips",
    "estimate_rips",
    "estimate_with_model",
    "evaluation_policy",
    "exact_value",
    "fit_tree",
    "importance_weight",
    "logging_policy",
    "marginal_prob",
    "model_from_name",
    "sample_dataset",
]
