"""A miniature sample-size sweep through the harness.

The full experiment grid is run by ``rankope sweep``; here we run a short
version in-process and print normalized MSE for each estimator as the logged
dataset grows.

Run: python3 demos/03_small_sweep.py   (about a minute)
"""
from rankope.harness import SweepConfig, run_sweep

config = SweepConfig(param="n", grid=(500, 2000), replicates=10, K=4, truth_contexts=20_000,
                     estimators=("ips", "iips", "rips", "aips_opt"))
result = run_sweep(config, progress=print)

print(f"\n{'n':>6} " + " ".join(f"{e:>10}" for e in config.estimators))
for n in config.grid:
    print(f"{n:>6} " + " ".join(f"{result.lookup(n, e)['mse_norm']:>10.4f}" for e in config.estimators))
