"""Plain-text config parsing and CSV serialization."""
from __future__ import annotations

import csv
import io as _io
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import RankingDataset
from .exceptions import ConfigError, DimensionError
from .synthetic import EnvConfig


def parse_key_values(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_key_values(path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text())


def parse_list(value: str, cast=str) -> tuple:
    return tuple(cast(v.strip()) for v in value.split(",") if v.strip())


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {value!r}")


_ENV_CASTS = {
    "d": int,
    "num_actions": int,
    "ranking_size": int,
    "sigma": float,
    "delta": float,
    "epsilon": float,
    "seed": int,
    "models": lambda v: parse_list(v),
    "gammas": lambda v: parse_list(v, float),
    "lam": lambda v: None if v.lower() == "none" else float(v),
    "argmax_eval": parse_bool,
}


def env_config_from_mapping(values: dict[str, str], strict: bool = True) -> EnvConfig:
    """Build an :class:`EnvConfig`; unknown keys raise unless ``strict=False``."""
    kwargs = {}
    for key, raw in values.items():
        if key not in _ENV_CASTS:
            if strict:
                raise ConfigError(f"unknown environment key {key!r}")
            continue
        try:
            kwargs[key] = _ENV_CASTS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return EnvConfig(**kwargs)


def read_env_config(path) -> EnvConfig:
    return env_config_from_mapping(read_key_values(path))


def dataset_to_csv(dataset: RankingDataset, path=None, include_latent: bool = True) -> str:
    """Columnar CSV with a ``d,abs_A,K`` metadata header.

    The first two lines hold the dimensions; then one row per record with
    ``x_*``, ``a_*``, ``r_*`` and, when present, the flattened latent matrix.
    Returns the text and writes it to ``path`` when given.
    """
    d, K = dataset.dim_context, dataset.ranking_size
    with_c = include_latent and dataset.latent_behavior is not None
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["d", "abs_A", "K"])
    writer.writerow([d, dataset.num_actions, K])
    header = [f"x_{j}" for j in range(d)] + [f"a_{k}" for k in range(K)] + [f"r_{k}" for k in range(K)]
    writer.writerow(header + (["c_flat"] if with_c else []))
    for i in range(dataset.n):
        row = [repr(float(v)) for v in dataset.contexts[i]]
        row += [str(int(v)) for v in dataset.actions[i]]
        row += [repr(float(v)) for v in dataset.rewards[i]]
        if with_c:
            row.append("".join(str(int(v)) for v in dataset.latent_behavior[i].ravel()))
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def dataset_from_csv(source) -> RankingDataset:
    """Inverse of :func:`dataset_to_csv`; ``source`` is a path or the CSV text."""
    text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else str(source)
    rows = list(csv.reader(_io.StringIO(text)))
    if len(rows) < 3 or rows[0] != ["d", "abs_A", "K"]:
        raise DimensionError("missing d,abs_A,K metadata header")
    d, A, K = (int(v) for v in rows[1])
    header = rows[2]
    expected = [f"x_{j}" for j in range(d)] + [f"a_{k}" for k in range(K)] + [f"r_{k}" for k in range(K)]
    if header[: len(expected)] != expected:
        raise DimensionError("column header does not match the metadata dimensions")
    with_c = header[len(expected):] == ["c_flat"]
    body = rows[3:]
    n = len(body)
    contexts = np.array([[float(v) for v in r[:d]] for r in body]).reshape(n, d)
    actions = np.array([[int(v) for v in r[d : d + K]] for r in body], dtype=np.int64).reshape(n, K)
    rewards = np.array([[float(v) for v in r[d + K : d + 2 * K]] for r in body]).reshape(n, K)
    latent = None
    if with_c:
        flat = [r[d + 2 * K] for r in body]
        if any(len(f) != K * K for f in flat):
            raise DimensionError("c_flat entries must have K*K digits")
        latent = np.array([[int(ch) for ch in f] for f in flat], dtype=np.uint8).reshape(n, K, K)
    return RankingDataset(contexts, actions, rewards, A, latent_behavior=latent)


def behavior_matrix_to_csv(bits, path=None) -> str:
    """One K-column row per matrix row."""
    arr = np.asarray(getattr(bits, "bits", bits), dtype=np.uint8)
    text = "\n".join(",".join(str(int(v)) for v in row) for row in arr) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def write_rows(path, header: Iterable[str], rows: Iterable[Iterable], float_format: str = "{:.10g}") -> None:
    """CSV writer with a fixed float format, so repeated runs are byte-identical."""

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return float_format.format(float(v))
        return str(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def fit_log_rows(tree, position: Optional[int] = None, replicate: Optional[int] = None) -> list[list]:
    prefix = [v for v in (replicate, position) if v is not None]
    return [
        prefix + [r.node_id, r.feature, r.threshold, r.left_model, r.right_model, r.mse_hat, r.parent_mse, int(r.accepted)]
        for r in tree.fit_log
    ]


FIT_LOG_HEADER = ["node_id", "feature", "threshold", "left_model", "right_model", "mse_hat", "parent_mse", "accepted"]
