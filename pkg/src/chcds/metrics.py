"""Evaluation of prediction sets: coverage, size, and conditional
calibration. This module computes numbers only; rendering lives with
the reporting code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .hdr import PredictionSet


@dataclass(frozen=True)
class EvaluationReport:
    """Metrics of a batch of prediction sets against observed pairs.

    ``coverage`` counts responses inside their set (infinite sets always
    cover). ``mean_size`` averages total interval length, with infinite
    sets contributing the full grid length through their stored
    ``total_length``. ``cad`` is the conditional-coverage absolute
    deviation: a count-weighted mean over covariate bins of
    ``|bin coverage - target|``. Bin-level tallies are exposed so
    deviations can be pooled across replicates.
    """

    coverage: float
    mean_size: float
    cad: float
    infinite_rate: float
    n_points: int
    target: float
    bin_centers: np.ndarray
    bin_counts: np.ndarray
    bin_covered: np.ndarray

    @property
    def bin_coverage(self) -> np.ndarray:
        """Per-bin coverage; NaN where a bin holds no points."""
        with np.errstate(invalid="ignore"):
            return np.where(
                self.bin_counts > 0, self.bin_covered / self.bin_counts, np.nan
            )


def conditional_absolute_deviation(
    bin_counts: np.ndarray, bin_covered: np.ndarray, target: float
) -> float:
    """Count-weighted mean absolute deviation of bin coverage from target."""
    counts = np.asarray(bin_counts, dtype=float)
    covered = np.asarray(bin_covered, dtype=float)
    total = counts.sum()
    if total == 0:
        return float("nan")
    filled = counts > 0
    dev = np.abs(covered[filled] / counts[filled] - target)
    return float((counts[filled] * dev).sum() / total)


def evaluate(
    sets: list[PredictionSet],
    test: Dataset,
    alpha: float,
    bins: int = 20,
    x_range: tuple[float, float] | None = None,
) -> EvaluationReport:
    """Score prediction sets against their test pairs.

    Binning for the conditional deviation uses the first covariate over
    ``x_range`` (defaulting to the observed range) with ``bins``
    equal-width bins; empty bins carry no weight.
    """
    if len(sets) != len(test):
        raise ValueError("one prediction set per test pair is required")
    if len(sets) == 0:
        raise ValueError("cannot evaluate an empty batch")
    target = 1.0 - alpha

    covered = np.array(
        [s.infinite or bool(s.contains(y)) for s, y in zip(sets, test.y)]
    )
    sizes = np.array([s.total_length for s in sets])
    infinite = np.array([s.infinite for s in sets])

    x1 = test.x[:, 0]
    lo, hi = x_range if x_range is not None else (x1.min(), x1.max())
    if not hi > lo:
        hi = lo + 1.0
    idx = np.clip(((x1 - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
    bin_counts = np.bincount(idx, minlength=bins)
    bin_covered = np.bincount(idx, weights=covered.astype(float), minlength=bins)
    centers = lo + (np.arange(bins) + 0.5) * (hi - lo) / bins

    return EvaluationReport(
        coverage=float(covered.mean()),
        mean_size=float(sizes.mean()),
        cad=conditional_absolute_deviation(bin_counts, bin_covered, target),
        infinite_rate=float(infinite.mean()),
        n_points=len(sets),
        target=target,
        bin_centers=centers,
        bin_counts=bin_counts,
        bin_covered=bin_covered,
    )


@dataclass(frozen=True)
class CoverageBoundsCheck:
    """Outcome of the finite-sample coverage sandwich test."""

    ok: bool
    mean_coverage: float
    standard_error: float
    lower: float
    upper: float


def coverage_bounds_check(
    coverages: np.ndarray, alpha: float, n_cal: int
) -> CoverageBoundsCheck:
    """Check replicate coverages against the finite-sample sandwich.

    Split-conformal sets cover with probability in
    ``[1 - alpha, 1 - alpha + 1/(n_cal + 1)]``. The check accepts when
    the replicate mean lies inside that interval widened by three
    standard errors of the mean. Requires at least 100 replicates for
    the error estimate to be meaningful.
    """
    cov = np.asarray(coverages, dtype=float).ravel()
    if cov.shape[0] < 100:
        raise ValueError("need at least 100 replicate coverages")
    mean = float(cov.mean())
    se = float(cov.std(ddof=1) / np.sqrt(cov.shape[0]))
    lower = 1.0 - alpha - 3.0 * se
    upper = 1.0 - alpha + 1.0 / (n_cal + 1) + 3.0 * se
    return CoverageBoundsCheck(lower <= mean <= upper, mean, se, lower, upper)
