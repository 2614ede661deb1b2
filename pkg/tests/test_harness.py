import csv

import numpy as np
import pytest

from rankope import harness
from rankope.cli import config_from_mapping, main
from rankope.exceptions import ConfigError
from rankope.harness import (
    RealstyleConfig,
    RuntimeConfig,
    SweepConfig,
    run_oracle_suite,
    run_realstyle_eval,
    run_sweep,
    runtime_probe,
    summarize,
)
from rankope.io import dataset_from_csv, dataset_to_csv, parse_key_values
from rankope.synthetic import build_env, logging_policy, sample_dataset

TINY = dict(K=3, replicates=3, truth_contexts=2000, random_states=3)


def test_summarize_normalises_by_truth():
    mse, bias_sq, var, ci = summarize(np.array([1.0, 3.0]), 2.0)
    assert (bias_sq, var, mse, ci) == (0.0, 0.25, 0.25, 0.0)
    mse, bias_sq, var, ci = summarize(np.array([1.0, 4.0]), 2.0)
    assert (bias_sq, var, mse) == (0.0625, 0.5625, 0.625)
    assert ci == pytest.approx(1.96 * np.std([0.25, 1.0], ddof=1) / np.sqrt(2))


def test_config_parsing():
    cfg = config_from_mapping(SweepConfig, parse_key_values("param=delta\ngrid=0,0.5\nreplicates=2\n# note\n"))
    assert cfg.param == "delta" and cfg.grid == (0.0, 0.5) and cfg.replicates == 2
    with pytest.raises(ConfigError):
        config_from_mapping(SweepConfig, {"bogus": "1"})
    with pytest.raises(ConfigError):
        config_from_mapping(SweepConfig, {"replicates": "many"})
    with pytest.raises(ConfigError):
        parse_key_values("no equals sign")
    with pytest.raises(ConfigError):
        SweepConfig(param="size")
    with pytest.raises(ConfigError):
        SweepConfig(replicates=1)


def test_unbiased_estimators_show_bias_below_noise():
    cfg = SweepConfig(param="n", grid=(400,), estimators=("ips", "aips_true"), **{**TINY, "replicates": 20})
    res = run_sweep(cfg)
    for name in cfg.estimators:
        row = res.lookup(400, name)
        assert row["bias_sq_norm"] < row["var_norm"]
    assert {str(r[3]) for r in res.rows} == {"1", "2", "3", "all"}


def test_sweep_is_reproducible_and_rows_are_complete():
    cfg = SweepConfig(param="delta", grid=(0.0, 1.0), estimators=("ips", "fixed:C1", "aips_opt"), **TINY)
    a, b = run_sweep(cfg), run_sweep(cfg)
    assert a.rows == b.rows
    assert len(a.rows) == 2 * 3 * (cfg.K + 1)
    for row in a.rows:
        assert row[4] == pytest.approx(row[5] + row[6])


def test_realstyle_report(tmp_path):
    cfg = RealstyleConfig(n=300, K=3, bootstrap=8, truth_contexts=2000, random_states=3)
    rep = run_realstyle_eval(cfg)
    ratios, cdf = rep.cdf["aips_opt"]
    assert np.all(ratios == 1.0) and cdf[-1] == 1.0
    for name, pairs in rep.cvar.items():
        assert dict(pairs)[1.0] == pytest.approx(rep.squared_errors[name].mean())
        values = [v for _, v in pairs]
        assert values == sorted(values, reverse=True)
    rep.write(tmp_path)
    with open(tmp_path / "cvar.csv") as fh:
        assert next(csv.reader(fh)) == ["estimator", "alpha", "cvar"]
    with pytest.raises(ConfigError):
        RealstyleConfig(reference="other")


def test_oracle_suite_is_deterministic():
    a, b = run_oracle_suite(seed=3, instance_count=5), run_oracle_suite(seed=3, instance_count=5)
    assert a.text() == b.text() and a.passed
    with pytest.raises(ConfigError):
        run_oracle_suite(instance_count=0)


def test_runtime_probe_with_fake_clock():
    ticks = iter(range(10_000))
    rep = runtime_probe(RuntimeConfig(sizes=(200,), replicates=2, estimators=("ips", "iips"), truth_contexts=500), clock=lambda: next(ticks))
    assert rep.ratio(200, "ips") == 1.0 and rep.ratio(200, "iips") == 1.0
    with pytest.raises(ConfigError):
        RuntimeConfig(estimators=("iips",))


def test_cli_outputs_and_exit_codes(tmp_path, monkeypatch):
    cfg = tmp_path / "o.cfg"
    cfg.write_text("instance_count=3\n")
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    assert "overall: PASS" in (tmp_path / "ok" / "oracle_report.txt").read_text()
    monkeypatch.setattr(harness, "ORACLE_TOL", -1.0)
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "bad")]) == 1
    cfg.write_text("instance_count=0\n")
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "err")]) == 2

    sweep = tmp_path / "s.cfg"
    sweep.write_text("grid=200,300\nreplicates=2\nK=3\ntruth_contexts=1000\nrandom_states=2\n")
    assert main(["sweep", "--config", str(sweep), "--out", str(tmp_path / "sw")]) == 0
    with open(tmp_path / "sw" / "results.csv") as fh:
        assert next(csv.reader(fh)) == harness.RESULT_HEADER
    assert (tmp_path / "sw" / "fitlog.csv").exists()


def test_dataset_csv_round_trip(tmp_path):
    env = build_env(ranking_size=3)
    ds = sample_dataset(env, logging_policy(env), 12, np.random.default_rng(0))
    back = dataset_from_csv(dataset_to_csv(ds, tmp_path / "d.csv"))
    assert np.array_equal(back.contexts, ds.contexts) and np.array_equal(back.rewards, ds.rewards)
    assert np.array_equal(back.actions, ds.actions) and np.array_equal(back.latent_behavior, ds.latent_behavior)
    hidden = dataset_from_csv(tmp_path / "d.csv")
    assert hidden.n == 12
