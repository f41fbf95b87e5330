"""Reading and writing: config files, datasets, and result tables.

Config files are flat ``key = value`` lines with ``#`` comments.
Datasets come from headed CSV files with covariate columns ``x1..xd``
and a response column ``y``. All delimited output uses a fixed float
format so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .experiment import ESTIMATOR_NAMES, METHOD_NAMES, ExperimentConfig, ExperimentResult
from .hdr import PredictionSet


class ConfigError(ValueError):
    """A config file is malformed or inconsistent."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_methods(raw: str) -> tuple[str, ...]:
    methods = tuple(part.strip() for part in raw.split(",") if part.strip())
    if not methods:
        raise ValueError("method list is empty")
    return methods


def _parse_optional_float(raw: str) -> float | None:
    return None if raw.strip().lower() == "none" else float(raw)


# key -> (parser, ExperimentConfig field)
_CONFIG_SCHEMA = {
    "scenario": (str.strip, "scenario"),
    "method": (_parse_methods, "methods"),
    "estimator": (str.strip, "estimator"),
    "n_train": (int, "n_train"),
    "n_cal": (int, "n_cal"),
    "n_test": (int, "n_test"),
    "replicates": (int, "replicates"),
    "alpha": (float, "alpha"),
    "seed": (int, "seed"),
    "workers": (int, "workers"),
    "gamma": (float, "gamma"),
    "cutoff_level": (_parse_optional_float, "cutoff_level"),
    "bins": (int, "bins"),
    "grid.n_points": (int, "grid_points"),
    "grid.pad_sd": (float, "grid_pad_sd"),
    "knn.k": (int, "knn_k"),
    "kernel.response_bandwidth": (_parse_optional_float, "kernel_response_bandwidth"),
    "kernel.covariate_bandwidth": (_parse_optional_float, "kernel_covariate_bandwidth"),
    "gmix.joint_components": (int, "gmix_joint"),
    "gmix.marginal_components": (int, "gmix_marginal"),
    "gmix.max_iters": (int, "gmix_max_iters"),
    "gmix.loglik_tol": (float, "gmix_tol"),
    "gmix.covariance_floor": (float, "gmix_floor"),
    "gmix.restarts": (int, "gmix_restarts"),
}

# Keys consumed by the CLI rather than the experiment harness.
_EXTRA_KEYS = {
    "train_fraction": float,
    "figures": _parse_bool,
}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` config text into typed values.

    Unknown keys and unparseable values raise ``ConfigError`` naming the
    offending line.
    """
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in _CONFIG_SCHEMA:
            parser, _ = _CONFIG_SCHEMA[key]
        elif key in _EXTRA_KEYS:
            parser = _EXTRA_KEYS[key]
        else:
            valid = ", ".join(sorted(list(_CONFIG_SCHEMA) + list(_EXTRA_KEYS)))
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: {valid}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return values


def load_config(path: str | Path) -> dict:
    """Read and parse a config file."""
    return parse_config_text(Path(path).read_text())


def experiment_config_from_values(values: dict, **overrides) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed config values.

    ``overrides`` (e.g. a command-line seed) replace file values. CLI
    extra keys in ``values`` are ignored here.
    """
    kwargs = {}
    for key, (_, attr) in _CONFIG_SCHEMA.items():
        if key in values:
            kwargs[attr] = values[key]
    kwargs.update(overrides)
    if "scenario" not in kwargs:
        raise ConfigError("config must set 'scenario'")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_dataset_csv(path: str | Path) -> Dataset:
    """Load a dataset from CSV with columns ``x1..xd`` and ``y``.

    Raises ``ValueError`` naming the row and column of the first
    malformed cell, and on missing or misnamed header columns.
    """
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"x{i + 1}" for i in range(d)] + ["y"]
        if d < 1 or header != expected:
            raise ValueError(
                f"{path}: header must be x1..xd,y; got {','.join(header)}"
            )
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ValueError(
                    f"{path}: row {rowno}: expected {d + 1} fields, got {len(row)}"
                )
            parsed = []
            for name, cell in zip(expected, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {rowno}, column {name}: could not parse "
                        f"{cell.strip()!r} as a number"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(rows)
    return Dataset(arr[:, :-1], arr[:, -1])


def load_query_csv(path: str | Path) -> np.ndarray:
    """Load covariate queries from CSV with columns ``x1..xd``.

    An empty body (header only) yields a ``(0, d)`` array.
    """
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        d = len(header)
        if d < 1 or header != [f"x{i + 1}" for i in range(d)]:
            raise ValueError(f"{path}: header must be x1..xd; got {','.join(header)}")
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if len(row) != d:
                raise ValueError(
                    f"{path}: row {rowno}: expected {d} fields, got {len(row)}"
                )
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise ValueError(f"{path}: row {rowno}: malformed number") from None
    return np.asarray(rows, dtype=float).reshape(-1, d)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return "nan"
    return format(v, ".10g")


def write_results_csv(path: str | Path, result: ExperimentResult) -> Path:
    """Per-replicate metric rows for every method."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["method", "scenario", "replicate", "coverage", "mean_size", "cad",
             "infinite_rate", "adjustment"]
        )
        for method, summary in result.methods.items():
            for i, rep in enumerate(summary.replicates):
                writer.writerow(
                    [
                        method,
                        result.config.scenario,
                        int(rep),
                        _fmt(summary.coverage[i]),
                        _fmt(summary.mean_size[i]),
                        _fmt(summary.cad[i]),
                        _fmt(summary.infinite_rate[i]),
                        _fmt(summary.adjustment[i]),
                    ]
                )
    return path


def write_conditional_csv(path: str | Path, result: ExperimentResult) -> Path:
    """Replicate-pooled conditional coverage per covariate bin."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "x_bin_center", "coverage", "count"])
        for method, summary in result.methods.items():
            pooled = summary.pooled_bin_coverage
            for center, cov, count in zip(
                summary.bin_centers, pooled, summary.bin_counts
            ):
                writer.writerow([method, _fmt(center), _fmt(cov), int(count)])
    return path


def write_summary_csv(path: str | Path, result: ExperimentResult) -> Path:
    """One aggregate row per method."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["method", "scenario", "replicates", "coverage_mean", "coverage_se",
             "size_mean", "size_se", "cad_mean", "cad_pooled", "infinite_rate"]
        )
        for method, summary in result.methods.items():
            writer.writerow(
                [
                    method,
                    result.config.scenario,
                    summary.replicates.shape[0],
                    _fmt(summary.coverage_mean),
                    _fmt(summary.coverage_se),
                    _fmt(summary.size_mean),
                    _fmt(summary.size_se),
                    _fmt(summary.cad_mean),
                    _fmt(summary.pooled_cad),
                    _fmt(summary.infinite_rate_mean),
                ]
            )
    return path


def write_predictions_csv(path: str | Path, sets: list[PredictionSet]) -> Path:
    """Interval rows per query: one row per interval of each set."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["query", "interval", "lower", "upper", "infinite"])
        for q, pset in enumerate(sets):
            if pset.intervals.shape[0] == 0:
                writer.writerow([q, 0, "nan", "nan", _fmt(pset.infinite)])
                continue
            for j, (lo, hi) in enumerate(pset.intervals):
                writer.writerow([q, j, _fmt(lo), _fmt(hi), _fmt(pset.infinite)])
    return path


def config_digest(values: dict) -> str:
    """Stable hash of parsed config values."""
    canon = "\n".join(f"{k}={values[k]}" for k in sorted(values))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_manifest(
    path: str | Path,
    values: dict,
    seed: int,
    elapsed_seconds: float,
    created: str,
) -> Path:
    """Run provenance: config echo, digest, seed, versions, timing."""
    path = Path(path)
    lines = [f"created = {created}"]
    lines.append(f"config_digest = {config_digest(values)}")
    lines.append(f"seed = {seed}")
    lines.append(f"python = {platform.python_version()}")
    lines.append(f"numpy = {np.__version__}")
    lines.append(f"elapsed_seconds = {elapsed_seconds:.1f}")
    lines.append("")
    for key in sorted(values):
        lines.append(f"{key} = {values[key]}")
    path.write_text("\n".join(lines) + "\n")
    return path
