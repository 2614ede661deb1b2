"""Learning where each behavior assumption fits best.

Users left of ``x_0 = 0`` examine items independently; users to the right
react to the whole list. A greedy tree with an exact MSE oracle looks for a
context split and an assumption per side, and we compare its estimate with
both one-size-fits-all choices.

Greedy refinement below the first split judges each small node on its own,
so it can drift right-side leaves toward the lower-variance assumption even
though their small biases add up. We show a depth-one tree next to the fully
grown one.

Run: python3 demos/02_fit_behavior_tree.py
"""
import numpy as np

from rankope.behavior import PartitionBehavior, canonical_model
from rankope.behavior_opt import CandidateSet, ExactOracleMse, fit_tree
from rankope.estimators import BehaviorAssignment, estimate_aips, estimate_iips, estimate_ips
from rankope.synthetic import build_env, evaluation_policy, exact_value, logging_policy, sample_contexts, sample_dataset

K = 2
env = build_env(ranking_size=K, num_actions=2, d=2, seed=0)
ind, std = canonical_model("independence", K), canonical_model("standard", K)
env = env.with_behavior(PartitionBehavior((ind, std), feature=0, threshold=0.0))
pi, pi0 = evaluation_policy(env), logging_policy(env)
truth = exact_value(env, pi, K - 1, sample_contexts(env, 100_000, np.random.default_rng(99)))

rng = np.random.default_rng(1)
data = sample_dataset(env, pi0, 4000, rng).without_latent()
oracle_mse = ExactOracleMse(env)
fit_rng = np.random.default_rng(2)
tree = fit_tree(data, CandidateSet([ind, std]), oracle_mse, pi, pi0, K - 1, random_states=50, seed=fit_rng, aggregation="pooled")
stump = fit_tree(data, CandidateSet([ind, std]), oracle_mse, pi, pi0, K - 1, random_states=50, seed=np.random.default_rng(2),
                 aggregation="pooled", max_depth=1)

root_split = next(r for r in tree.fit_log if r.node_id == 0 and r.accepted)
print(f"first split: x_{root_split.feature} <= {root_split.threshold:+.3f}  ->  {root_split.left_model} | {root_split.right_model}")
right = data.contexts[:, 0] > root_split.threshold
share = np.mean(tree.model_indices(data.contexts)[right] == 1)
print(f"full tree: {len(tree.leaves)} leaves, standard model on {share:.0%} of right-side records\n")

for label, est in [("standard", estimate_ips(data, pi, pi0, K - 1).value),
                   ("independent", estimate_iips(data, pi, pi0, K - 1).value),
                   ("depth-1 tree", estimate_aips(data, pi, pi0, K - 1, BehaviorAssignment.from_tree(stump)).value),
                   ("full tree", estimate_aips(data, pi, pi0, K - 1, BehaviorAssignment.from_tree(tree)).value)]:
    print(f"{label:<13} estimate {est:.4f}   error {est - truth:+.4f}")
print(f"{'truth':<13} {truth:.4f}")
