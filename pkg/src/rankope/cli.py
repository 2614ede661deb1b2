"""Command-line entry point: ``rankope {sweep,realstyle,oracle,runtime} --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from .exceptions import ConfigError, RankOPEError
from .harness import RealstyleConfig, RuntimeConfig, SweepConfig, run_oracle_suite, run_realstyle_eval, run_sweep, runtime_probe
from .io import parse_bool, parse_list, read_key_values


def _cast(type_name: str, raw: str):
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    if type_name == "bool":
        return parse_bool(raw)
    if type_name == "tuple":
        return parse_list(raw)
    if type_name.startswith("Optional"):
        return None if raw.lower() == "none" else float(raw)
    return raw


def config_from_mapping(cls, values: dict):
    """Instantiate a config dataclass from string values, casting by field type."""
    types = {f.name: str(f.type) for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        try:
            kwargs[key] = _cast(types[key], raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return cls(**kwargs)


def load_config(cls, path: Optional[str]):
    return cls() if path is None else config_from_mapping(cls, read_key_values(path))


def cmd_sweep(args) -> int:
    config = load_config(SweepConfig, args.config)
    result = run_sweep(config, progress=lambda msg: print(msg, file=sys.stderr))
    result.to_csv(args.out / "results.csv")
    if config.write_fit_log:
        result.fit_log_to_csv(args.out / "fitlog.csv")
    return 0


def cmd_realstyle(args) -> int:
    config = load_config(RealstyleConfig, args.config)
    report = run_realstyle_eval(config)
    report.write(args.out)
    for name, rate in report.win_rates.items():
        print(f"{name}: win rate {rate:.3f}")
    return 0


def cmd_oracle(args) -> int:
    values = {} if args.config is None else read_key_values(args.config)
    unknown = set(values) - {"seed", "instance_count", "workers"}
    if unknown:
        raise ConfigError(f"unknown oracle keys {sorted(unknown)}")
    report = run_oracle_suite(
        seed=int(values.get("seed", 0)),
        instance_count=int(values.get("instance_count", 100)),
        workers=int(values.get("workers", 1)),
    )
    report.write(args.out)
    print(report.text(), end="")
    return 0 if report.passed else 1


def cmd_runtime(args) -> int:
    report = runtime_probe(load_config(RuntimeConfig, args.config))
    report.write(args.out)
    for n, name, mean, std, ratio in report.rows:
        print(f"n={n} {name}: {mean:.4f}s +- {std:.4f}s ({ratio:.2f}x ips)")
    return 0


COMMANDS = {"sweep": cmd_sweep, "realstyle": cmd_realstyle, "oracle": cmd_oracle, "runtime": cmd_runtime}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankope", description="Off-policy evaluation of ranking policies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; defaults apply when omitted")
        p.add_argument("--out", required=True, type=Path, help="output directory")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](args)
    except RankOPEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
