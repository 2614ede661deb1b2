"""Replicated simulation runs: parameter sweeps, bootstrap evaluation, oracle checks and timing.

Every run is a deterministic function of its config. Replicate ``r`` of grid
point ``g`` draws from ``SeedSequence(seed, spawn_key=(g, r))``; work units
run on a thread pool and are reduced in replicate order, so the outputs do
not depend on the worker count.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import oracle
from .behavior import BehaviorMatrix, model_from_name
from .behavior_opt import CandidateSet, NoisyOracleMse, fit_tree
from .core import FactoredPolicy, RankingDataset
from .estimators import BehaviorAssignment, estimate_aips, estimate_with_model
from .exceptions import ConfigError, RankOPEError
from .io import FIT_LOG_HEADER, fit_log_rows, write_rows
from .synthetic import (
    AlphaWeights,
    EnvConfig,
    SyntheticEnvironment,
    build_env,
    evaluation_policy,
    exact_value_per_context,
    logging_policy,
    sample_contexts,
    sample_dataset,
)

SWEEP_PARAMS = ("n", "K", "delta", "sigma", "epsilon", "noise")
BASE_ESTIMATORS = ("ips", "iips", "rips", "aips_true", "aips_opt")
FIXED_PREFIX = "fixed:"
RESULT_HEADER = ["grid_param", "grid_value", "estimator", "position", "mse_norm", "bias_sq_norm", "var_norm", "ci_half"]
TRUTH_KEY = 2**31 - 1


class ReplicateError(RankOPEError, RuntimeError):
    """A replicate failed; the message names the grid value, replicate and seed."""


def _check_estimators(names: Sequence[str]) -> None:
    for name in names:
        if name not in BASE_ESTIMATORS and not name.startswith(FIXED_PREFIX):
            raise ConfigError(f"unknown estimator {name!r}; expected one of {BASE_ESTIMATORS} or fixed:<model>")


@dataclass(frozen=True)
class SimulationSettings:
    """Environment and AIPS(opt) settings shared by every runner."""

    n: int = 8000
    K: int = 8
    delta: float = 0.6
    sigma: float = 0.5
    epsilon: float = 0.3
    d: int = 5
    num_actions: int = 2
    noise: float = 0.3
    lam: Optional[float] = None
    seed: int = 0
    alpha: str = "dcg"
    estimators: tuple = BASE_ESTIMATORS
    candidates: tuple = ("S", "C", "I", "C1", "I1")
    random_states: int = 10
    min_leaf: int = 50
    aggregation: str = "weighted"
    bias_mode: str = "estimate"
    noise_scope: str = "model"
    truth_contexts: int = 200_000
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        _check_estimators(self.estimators)
        if self.n < 1 or self.K < 1 or self.workers < 1 or self.truth_contexts < 1:
            raise ConfigError("n, K, workers and truth_contexts must be positive")
        if self.noise < 0:
            raise ConfigError("noise multiplier must be non-negative")
        if self.alpha not in ("dcg", "uniform"):
            raise ConfigError("alpha preset must be dcg or uniform")

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            d=self.d,
            num_actions=self.num_actions,
            ranking_size=self.K,
            sigma=self.sigma,
            delta=self.delta,
            epsilon=self.epsilon,
            seed=self.seed,
            lam=self.lam,
        )


@dataclass(frozen=True)
class SweepConfig(SimulationSettings):
    """One-parameter sweep.

    ``param`` names the swept field (``noise`` is the bias-noise multiplier);
    all other fields stay at their values. ``env_seed_mode="shared"`` builds
    every grid point's environment from ``seed`` so only the swept parameter
    changes; ``per_grid`` derives a fresh environment seed per grid point.
    """

    param: str = "n"
    grid: tuple = (1000, 4000, 16000)
    replicates: int = 100
    env_seed_mode: str = "shared"
    write_fit_log: bool = True

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"swept parameter must be one of {SWEEP_PARAMS}")
        if len(self.grid) == 0:
            raise ConfigError("grid must be non-empty")
        if self.replicates < 2:
            raise ConfigError("replicate count must be at least 2")
        if self.env_seed_mode not in ("shared", "per_grid"):
            raise ConfigError("env_seed_mode must be shared or per_grid")
        cast = int if self.param in ("n", "K") else float
        object.__setattr__(self, "grid", tuple(cast(v) for v in self.grid))

    def point(self, grid_index: int) -> SimulationSettings:
        """Settings at one grid point."""
        value = self.grid[grid_index]
        seed = self.seed
        if self.env_seed_mode == "per_grid":
            seed = int(np.random.SeedSequence(self.seed, spawn_key=(grid_index,)).generate_state(1)[0])
        base = {f.name: getattr(self, f.name) for f in fields(SimulationSettings)}
        base.update({self.param: value, "seed": seed})
        return SimulationSettings(**base)


@dataclass
class Setup:
    """Everything a replicate needs at one grid point."""

    settings: SimulationSettings
    env: SyntheticEnvironment
    policy: FactoredPolicy
    logging: FactoredPolicy
    truth_k: np.ndarray
    alpha: np.ndarray
    candidates: CandidateSet
    mse_estimator: NoisyOracleMse

    @property
    def truth(self) -> float:
        return float(self.alpha @ self.truth_k)


def _named_model(env: SyntheticEnvironment, name: str, seed: int) -> BehaviorMatrix:
    """Environment's own instance when it has the model (keeps random models identical)."""
    for model in env.behavior.models:
        if model.label == name:
            return model
    return model_from_name(name, env.ranking_size, np.random.default_rng(seed))


def truth_rng(seed: int) -> np.random.Generator:
    """Context stream for ground truth; shared by every grid point of a run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(TRUTH_KEY,)))


def make_setup(settings: SimulationSettings, truth_seed: Optional[int] = None) -> Setup:
    env = build_env(settings.env_config())
    pi, pi0 = evaluation_policy(env), logging_policy(env)
    x = sample_contexts(env, settings.truth_contexts, truth_rng(settings.seed if truth_seed is None else truth_seed))
    truth_k = np.array([exact_value_per_context(env, pi, k, x).mean() for k in range(env.ranking_size)])
    alpha = AlphaWeights.preset(settings.alpha, env.ranking_size).alpha
    cands = CandidateSet([_named_model(env, c, settings.seed) for c in settings.candidates])
    mse = NoisyOracleMse(env, settings.noise, settings.bias_mode, settings.noise_scope)
    return Setup(settings, env, pi, pi0, truth_k, alpha, cands, mse)


def replicate_rng(seed: int, grid_index: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(grid_index, replicate)))


def run_estimator(name: str, dataset: RankingDataset, setup: Setup, rng: np.random.Generator, fit_logs: Optional[list] = None) -> np.ndarray:
    """Per-position estimates ``(K,)`` of one estimator on one dataset."""
    K = dataset.ranking_size
    pi, pi0 = setup.policy, setup.logging
    out = np.empty(K)
    if name == "aips_opt":
        hidden = dataset.without_latent()
        s = setup.settings
        for k in range(K):
            tree = fit_tree(
                hidden, setup.candidates, setup.mse_estimator, pi, pi0, k,
                random_states=s.random_states, min_leaf=s.min_leaf, seed=rng, aggregation=s.aggregation,
            )
            if fit_logs is not None:
                fit_logs.extend(fit_log_rows(tree, position=k + 1))
            out[k] = estimate_aips(hidden, pi, pi0, k, BehaviorAssignment.from_tree(tree)).value
        return out
    if name == "aips_true":
        assignment = BehaviorAssignment.true_latent()
        return np.array([estimate_aips(dataset, pi, pi0, k, assignment).value for k in range(K)])
    canonical = {"ips": "S", "iips": "I", "rips": "C"}
    label = canonical.get(name, name[len(FIXED_PREFIX):] if name.startswith(FIXED_PREFIX) else None)
    if label is None:
        raise ConfigError(f"unknown estimator {name!r}")
    model = _named_model(setup.env, label, setup.settings.seed)
    return np.array([estimate_with_model(dataset, pi, pi0, k, model).value for k in range(K)])


def _replicate(setup: Setup, master_seed: int, grid_index: int, replicate: int, with_log: bool) -> tuple[dict, list]:
    s = setup.settings
    rng = replicate_rng(master_seed, grid_index, replicate)
    dataset = sample_dataset(setup.env, setup.logging, s.n, rng, oracle_visible=True)
    logs: list = []
    values = {}
    for name in s.estimators:
        values[name] = run_estimator(name, dataset, setup, rng, logs if (with_log and name == "aips_opt") else None)
    return values, logs


def ordered_map(fn: Callable, items: Sequence, workers: int) -> list:
    """``[fn(item) for item in items]`` on a thread pool, results in input order."""
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class GridPointResult:
    value: float
    truth_k: np.ndarray
    truth: float
    estimates: dict  # name -> (R, K)
    alpha: np.ndarray


@dataclass
class SweepResult:
    config: SweepConfig
    points: list
    rows: list = field(default_factory=list)
    fit_log: list = field(default_factory=list)

    def lookup(self, grid_value, estimator: str, position="all") -> dict:
        """Row dict for one (grid value, estimator, position)."""
        for row in self.rows:
            if row[1] == grid_value and row[2] == estimator and str(row[3]) == str(position):
                return dict(zip(RESULT_HEADER, row))
        raise KeyError((grid_value, estimator, position))

    def to_csv(self, path) -> None:
        write_rows(path, RESULT_HEADER, self.rows)

    def fit_log_to_csv(self, path) -> None:
        write_rows(path, ["grid_value", "replicate", "position"] + FIT_LOG_HEADER, self.fit_log)


def summarize(estimates: np.ndarray, truth: float) -> tuple[float, float, float, float]:
    """Normalized ``(mse, bias_sq, variance, ci_half)`` from replicate estimates."""
    dec = oracle.mse_decompose(np.column_stack([estimates, np.full(len(estimates), truth)]))
    scale = truth**2 if truth != 0 else 1.0
    se = (estimates - truth) ** 2 / scale
    ci = 1.96 * float(np.std(se, ddof=1)) / float(np.sqrt(len(se)))
    return dec.mse / scale, dec.bias_sq / scale, dec.variance / scale, ci


def _point_rows(config: SweepConfig, point: GridPointResult) -> list:
    rows = []
    for name in config.estimators:
        est = point.estimates[name]
        for k in range(est.shape[1]):
            rows.append([config.param, point.value, name, k + 1, *summarize(est[:, k], point.truth_k[k])])
        rows.append([config.param, point.value, name, "all", *summarize(est @ point.alpha, point.truth)])
    return rows


def run_sweep(config: SweepConfig, progress: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Replicated estimator comparison at every grid value.

    Ground truth is the exact conditional value averaged over
    ``truth_contexts`` contexts; per-position rows are normalized by
    ``V_k^2`` and the ``all`` row (alpha-weighted) by ``V^2``.
    """
    points, fit_log = [], []
    for gi, value in enumerate(config.grid):
        settings = config.point(gi)
        setup = make_setup(settings, truth_seed=config.seed)

        def unit(rep, gi=gi, setup=setup, value=value):
            try:
                return _replicate(setup, config.seed, gi, rep, config.write_fit_log and rep == 0)
            except Exception as exc:  # re-raised with the offending seed
                raise ReplicateError(
                    f"replicate {rep} at {config.param}={value} failed (seed={config.seed}, spawn_key=({gi}, {rep})): {exc}"
                ) from exc

        outputs = ordered_map(unit, range(config.replicates), config.workers)
        estimates = {name: np.stack([o[0][name] for o in outputs]) for name in config.estimators}
        for row in outputs[0][1]:
            fit_log.append([value, 0, *row])
        points.append(GridPointResult(value, setup.truth_k, setup.truth, estimates, setup.alpha))
        if progress is not None:
            progress(f"{config.param}={value}: done")
    result = SweepResult(config, points, fit_log=fit_log)
    for point in points:
        result.rows.extend(_point_rows(config, point))
    return result


# ---------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class RealstyleConfig(SimulationSettings):
    """Bootstrap evaluation of one logged dataset against the exact value."""

    n: int = 2000
    K: int = 6
    bootstrap: int = 100
    reference: str = "aips_opt"
    cvar_alphas: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    estimators: tuple = ("ips", "iips", "rips", "aips_opt")

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.bootstrap < 1:
            raise ConfigError("bootstrap count must be positive")
        if self.reference not in self.estimators:
            raise ConfigError("reference estimator must be in the estimator list")
        object.__setattr__(self, "cvar_alphas", tuple(float(a) for a in self.cvar_alphas))


@dataclass
class RealstyleReport:
    config: RealstyleConfig
    squared_errors: dict  # name -> (B,)
    cdf: dict
    cvar: dict  # name -> list of (alpha, value)
    win_rates: dict

    def cdf_rows(self) -> list:
        return [[name, r, c] for name, (ratios, cdf) in self.cdf.items() for r, c in zip(ratios, cdf)]

    def cvar_rows(self) -> list:
        return [[name, a, v] for name, pairs in self.cvar.items() for a, v in pairs]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        write_rows(out / "cdf.csv", ["estimator", "relative_se", "cdf"], self.cdf_rows())
        write_rows(out / "cvar.csv", ["estimator", "alpha", "cvar"], self.cvar_rows())


def run_realstyle_eval(config: RealstyleConfig) -> RealstyleReport:
    """Bootstrap replicates of one dataset; SE of each estimator vs the exact value.

    Each bootstrap sample resamples records with replacement at the original
    size. Squared errors use the alpha-weighted value normalized by ``V^2``.
    """
    setup = make_setup(config)
    base = sample_dataset(setup.env, setup.logging, config.n, replicate_rng(config.seed, 0, 0), oracle_visible=True)

    def unit(b):
        rng = replicate_rng(config.seed, 1, b)
        sample = base.subset(rng.integers(0, base.n, size=base.n))
        return {name: float(setup.alpha @ run_estimator(name, sample, setup, rng)) for name in config.estimators}

    outputs = ordered_map(unit, range(config.bootstrap), config.workers)
    V = setup.truth
    se = {name: np.array([(o[name] - V) ** 2 for o in outputs]) / V**2 for name in config.estimators}
    cdf = oracle.relative_se_cdf(se, config.reference)
    cv = {name: [(a, oracle.cvar(errs, a)) for a in config.cvar_alphas] for name, errs in se.items()}
    wins = {name: oracle.win_rate(se, name) for name in config.estimators}
    return RealstyleReport(config, se, cdf, cv, wins)


# ---------------------------------------------------------------- oracle suite

ORACLE_TOL = 1e-10
VARIANCE_SLACK = 1e-12
IDENTITIES = ("unbiasedness", "variance_gap", "variance_gap_sign", "superset_variance", "bias_formula", "mse_decomposition")
SIGN_CHECKS = ("variance_gap_sign", "superset_variance")


@dataclass
class IdentityCheck:
    name: str
    max_deviation: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


@dataclass
class OracleReport:
    seed: int
    instance_count: int
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def text(self) -> str:
        lines = [f"oracle suite: seed={self.seed} instances={self.instance_count}"]
        for c in self.checks.values():
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"{status} {c.name}: max deviation {c.max_deviation:.3e}")
            for f in c.failures[:10]:
                lines.append(f"    failing instance {f}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"

    def rows(self) -> list:
        return [[c.name, c.max_deviation, int(c.passed), len(c.failures)] for c in self.checks.values()]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "oracle_report.txt").write_text(self.text())
        write_rows(out / "oracle_report.csv", ["identity", "max_deviation", "passed", "failures"], self.rows(), "{:.6e}")


def instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def check_instance(instance: oracle.EnumerationInstance, rng: np.random.Generator, supersets: int = 3) -> dict:
    """Largest deviation of every identity family on one instance.

    Equalities report absolute differences; the sign checks report the
    amount by which a quantity that must be non-negative falls below zero.
    """
    dev = {name: 0.0 for name in IDENTITIES}
    m, Z, K = instance.num_contexts, instance.num_models, instance.ranking_size
    true_bits = oracle.assignment_bits(instance, "aips_true")
    for k in range(K):
        value = oracle.exact_value(instance, k)
        aips = oracle.exact_moments(instance, "aips_true", k)
        ips = oracle.exact_moments(instance, "ips", k)
        dev["unbiasedness"] = max(dev["unbiasedness"], abs(aips.mean - value))
        gap = oracle.thm2_variance_gap(instance, k)
        dev["variance_gap"] = max(dev["variance_gap"], abs(gap - (ips.variance - aips.variance)))
        dev["variance_gap_sign"] = max(dev["variance_gap_sign"], -gap)
        for _ in range(supersets):
            sup = oracle.random_superset(true_bits, rng)
            diff = oracle.exact_moments(instance, sup, k).variance - aips.variance
            dev["superset_variance"] = max(dev["superset_variance"], -diff)
            # estimates that contain the truth are unbiased
            dev["bias_formula"] = max(dev["bias_formula"], abs(oracle.thm4_bias(instance, k, sup)))
        estimated = (rng.random((m, K, K)) < 0.5).astype(np.uint8)
        for est in (estimated, "iips", "rips", "ips"):
            formula = oracle.thm4_bias(instance, k, est)
            direct = oracle.exact_moments(instance, est, k).mean - value
            dev["bias_formula"] = max(dev["bias_formula"], abs(formula - direct))
    runs = np.column_stack([rng.normal(size=5), np.full(5, rng.normal())])
    dec = oracle.mse_decompose(runs)
    dev["mse_decomposition"] = abs(dec.mse - (dec.bias_sq + dec.variance))
    return dev


def _passes(name: str, deviation: float) -> bool:
    return deviation <= (VARIANCE_SLACK if name in SIGN_CHECKS else ORACLE_TOL)


def run_oracle_suite(seed: int = 0, instance_count: int = 100, workers: int = 1) -> OracleReport:
    """Randomized enumeration instances checked against every identity family."""
    if instance_count < 1:
        raise ConfigError("instance_count must be at least 1")

    def unit(i):
        rng = instance_rng(seed, i)
        return check_instance(oracle.random_instance(rng), rng)

    devs = ordered_map(unit, range(instance_count), workers)
    checks = {name: IdentityCheck(name) for name in IDENTITIES}
    for i, dev in enumerate(devs):
        for name, value in dev.items():
            check = checks[name]
            check.max_deviation = max(check.max_deviation, value)
            if not _passes(name, value):
                check.failures.append(f"index={i} seed={seed} deviation={value:.3e}")
    return OracleReport(seed, instance_count, checks)


# ---------------------------------------------------------------- runtime


@dataclass(frozen=True)
class RuntimeConfig(SimulationSettings):
    """Wall-clock comparison over a grid of dataset sizes."""

    sizes: tuple = (1000, 2000, 4000, 8000)
    replicates: int = 3
    estimators: tuple = ("ips", "iips", "rips", "aips_opt")

    def __post_init__(self) -> None:
        super().__post_init__()
        if "ips" not in self.estimators:
            raise ConfigError("the runtime probe needs ips as the baseline")
        if self.replicates < 1:
            raise ConfigError("replicates must be positive")
        object.__setattr__(self, "sizes", tuple(int(v) for v in self.sizes))


@dataclass
class RuntimeReport:
    config: RuntimeConfig
    rows: list  # [n, estimator, mean_s, std_s, ratio_vs_ips]

    def ratio(self, n: int, estimator: str = "aips_opt") -> float:
        for row in self.rows:
            if row[0] == n and row[1] == estimator:
                return row[4]
        raise KeyError((n, estimator))

    def write(self, out_dir) -> None:
        write_rows(Path(out_dir) / "runtime.csv", ["n", "estimator", "mean_s", "std_s", "ratio_vs_ips"], self.rows)


def runtime_probe(config: RuntimeConfig, clock: Callable[[], float] = time.perf_counter) -> RuntimeReport:
    """Mean and population std of wall time per estimator (all positions), plus the ratio to IPS.

    Runs serially so timings are not distorted by the pool.
    """
    setup = make_setup(config)
    rows = []
    for gi, n in enumerate(config.sizes):
        times = {name: [] for name in config.estimators}
        for rep in range(config.replicates):
            rng = replicate_rng(config.seed, gi, rep)
            dataset = sample_dataset(setup.env, setup.logging, n, rng, oracle_visible=True)
            for name in config.estimators:
                start = clock()
                run_estimator(name, dataset, setup, rng)
                times[name].append(clock() - start)
        base = float(np.mean(times["ips"]))
        for name in config.estimators:
            mean = float(np.mean(times[name]))
            rows.append([n, name, mean, float(np.std(times[name])), mean / base if base > 0 else float("inf")])
    return RuntimeReport(config, rows)


def with_overrides(config, **kwargs):
    return replace(config, **kwargs)
