"""Split-conformal calibration of density-based prediction sets.

Four calibration modes share one workflow: score every calibration pair
with a density-derived conformity score, take a fixed order statistic
of the scores, and threshold the estimated density at prediction time.

additive
    Score ``f(Y|X) - c(X)`` where ``c`` is the per-point density cutoff
    of the highest-density region at the working level. The prediction
    threshold ``c(x) + adjustment`` can reach zero or below, in which
    case the set is flagged infinite.
multiplicative
    Score ``f(Y|X) / (c(X) + gamma)``; thresholds scale rather than
    shift, so they stay positive whenever the adjustment is positive and
    the set never degenerates to the whole line.
negative-density
    Score ``f(Y|X)`` alone (no per-point cutoff); the classical
    density-threshold baseline.
hpd-split
    Score the mass of the density lying below the density at the
    observed response; thresholding that mass is equivalent to
    thresholding the density itself at a matched value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cde import ConditionalDensityModel
from .dataset import Dataset
from .hdr import (
    PredictionSet,
    ResponseGrid,
    hdr_cutoff_batch,
    level_set_from_density,
    mass_below,
    modal_threshold_for_mass_below,
)

CALIBRATION_MODES = ("additive", "multiplicative", "negative-density", "hpd-split")


def adjustment_index(alpha: float, n_cal: int) -> int:
    """1-based rank of the score order statistic used as the adjustment.

    The adjustment is the ``floor(alpha * (n_cal + 1))``-th smallest
    score. The rank must be at least 1, which bounds how small a
    calibration set can be at a given ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be strictly between 0 and 1")
    rank = math.floor(alpha * (n_cal + 1))
    if rank < 1:
        raise ValueError(
            f"calibration set too small for level alpha={alpha}: need "
            f"at least {math.ceil(1.0 / alpha)} points"
        )
    return rank


def _order_statistic(scores: np.ndarray, rank: int) -> float:
    return float(np.partition(scores, rank - 1)[rank - 1])


def calibration_from_scores(
    mode: str,
    alpha: float,
    scores: np.ndarray,
    cutoff_level: float | None = None,
    gamma: float = 0.0,
) -> CalibrationResult:
    """Assemble a calibration result from precomputed conformity scores.

    The adjustment is always the same fixed order statistic of the
    scores; every calibration mode funnels through here so the rank
    logic exists once.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    rank = adjustment_index(alpha, scores.shape[0])
    return CalibrationResult(
        mode,
        alpha,
        scores,
        _order_statistic(scores, rank),
        cutoff_level=cutoff_level,
        gamma=gamma,
    )


@dataclass(frozen=True)
class CalibrationResult:
    """Calibration scores and the selected adjustment for one mode.

    ``cutoff_level`` records the mass level at which per-point density
    cutoffs were computed (additive and multiplicative modes only);
    ``gamma`` is the denominator offset of the multiplicative mode.
    """

    mode: str
    alpha: float
    scores: np.ndarray
    adjustment: float
    cutoff_level: float | None = None
    gamma: float = 0.0

    def __post_init__(self):
        if self.mode not in CALIBRATION_MODES:
            raise ValueError(f"unknown calibration mode {self.mode!r}")


def _check_calibration_inputs(model, cal: Dataset, alpha: float) -> int:
    if len(cal) < 1:
        raise ValueError("calibration set is empty")
    return adjustment_index(alpha, len(cal))


def chcds_calibrate(
    model: ConditionalDensityModel,
    cal: Dataset,
    alpha: float,
    grid: ResponseGrid,
    cutoff_level: float | None = None,
) -> CalibrationResult:
    """Calibrate the additive density-cutoff score.

    ``cutoff_level`` defaults to ``1 - alpha``; passing a different
    level decouples the per-point cutoff from the coverage target,
    which is useful when stressing the additive mode near level one.
    """
    _check_calibration_inputs(model, cal, alpha)
    level = 1.0 - alpha if cutoff_level is None else cutoff_level
    rows = model.evaluate_grid(grid.points, cal.x)
    cutoffs, _, _ = hdr_cutoff_batch(rows, grid, level)
    scores = model.evaluate_at(cal.y, cal.x) - cutoffs
    return calibration_from_scores("additive", alpha, scores, cutoff_level=level)


def chcds_multiplicative_calibrate(
    model: ConditionalDensityModel,
    cal: Dataset,
    alpha: float,
    grid: ResponseGrid,
    gamma: float = 0.0,
    cutoff_level: float | None = None,
) -> CalibrationResult:
    """Calibrate the multiplicative density-cutoff score."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    _check_calibration_inputs(model, cal, alpha)
    level = 1.0 - alpha if cutoff_level is None else cutoff_level
    rows = model.evaluate_grid(grid.points, cal.x)
    cutoffs, _, _ = hdr_cutoff_batch(rows, grid, level)
    denom = cutoffs + gamma
    if (denom <= 0).any():
        raise ValueError("cutoff plus gamma must be positive for every point")
    scores = model.evaluate_at(cal.y, cal.x) / denom
    return calibration_from_scores(
        "multiplicative", alpha, scores, cutoff_level=level, gamma=gamma
    )


def negative_density_calibrate(
    model: ConditionalDensityModel, cal: Dataset, alpha: float
) -> CalibrationResult:
    """Calibrate on the raw estimated density at the observed response."""
    _check_calibration_inputs(model, cal, alpha)
    scores = model.evaluate_at(cal.y, cal.x)
    return calibration_from_scores("negative-density", alpha, scores)


def hpd_split_calibrate(
    model: ConditionalDensityModel,
    cal: Dataset,
    alpha: float,
    grid: ResponseGrid,
) -> CalibrationResult:
    """Calibrate on the density mass below the observed response's density."""
    _check_calibration_inputs(model, cal, alpha)
    rows = model.evaluate_grid(grid.points, cal.x)
    at_obs = model.evaluate_at(cal.y, cal.x)
    scores = mass_below(rows, grid, at_obs)
    return calibration_from_scores("hpd-split", alpha, scores)


@dataclass(frozen=True)
class ConformalPredictor:
    """A fitted density model plus a calibration, ready to predict sets.

    ``calibration = None`` gives the unadjusted predictor: the plain
    highest-density region of the estimate at ``cutoff_level`` (or
    ``1 - alpha`` when unset), with no conformal correction.
    """

    model: ConditionalDensityModel
    grid: ResponseGrid
    alpha: float
    calibration: CalibrationResult | None = None
    cutoff_level: float | None = None

    def _working_level(self) -> float:
        if self.calibration is not None and self.calibration.cutoff_level is not None:
            return self.calibration.cutoff_level
        if self.cutoff_level is not None:
            return self.cutoff_level
        return 1.0 - self.alpha

    def predict(self, x) -> PredictionSet:
        return self.predict_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def predict_batch(self, x_batch) -> list[PredictionSet]:
        """Prediction sets for each covariate row, sharing batched work."""
        rows = np.atleast_2d(self.model.evaluate_grid(self.grid.points, x_batch))
        mode = self.calibration.mode if self.calibration is not None else None
        cutoffs = None
        if mode in (None, "additive", "multiplicative"):
            cutoffs, _, _ = hdr_cutoff_batch(rows, self.grid, self._working_level())
        return self.sets_from_density_rows(rows, cutoffs)

    def sets_from_density_rows(
        self, rows: np.ndarray, cutoffs: np.ndarray | None = None
    ) -> list[PredictionSet]:
        """Prediction sets from precomputed density rows.

        ``cutoffs`` must be the per-row density cutoffs at this
        predictor's working level; they are required by the unadjusted,
        additive, and multiplicative modes and ignored otherwise.
        Callers evaluating several modes on one batch can compute the
        rows and cutoffs once and share them.
        """
        rows = np.atleast_2d(rows)
        mode = self.calibration.mode if self.calibration is not None else None
        if mode in (None, "additive", "multiplicative") and cutoffs is None:
            raise ValueError(f"mode {mode!r} requires per-row cutoffs")

        sets = []
        for i in range(rows.shape[0]):
            if mode is None:
                threshold = cutoffs[i]
            elif mode == "additive":
                threshold = cutoffs[i] + self.calibration.adjustment
            elif mode == "multiplicative":
                threshold = (cutoffs[i] + self.calibration.gamma) * self.calibration.adjustment
            elif mode == "negative-density":
                threshold = self.calibration.adjustment
            else:  # hpd-split
                value = modal_threshold_for_mass_below(
                    rows[i], self.grid, self.calibration.adjustment
                )
                sets.append(
                    level_set_from_density(rows[i], self.grid, value, inclusive=True)
                )
                continue
            sets.append(level_set_from_density(rows[i], self.grid, threshold))
        return sets

    def coverage_indicators(self, x_batch, y_points) -> np.ndarray:
        """Score-side membership of each ``(x, y)`` pair in its set.

        Evaluates the calibration-mode inequality directly on scores,
        bypassing interval construction; equals set membership except
        exactly on interval boundaries.
        """
        x = np.atleast_2d(np.asarray(x_batch, dtype=float))
        dens = self.model.evaluate_at(y_points, x)
        mode = self.calibration.mode if self.calibration is not None else None
        if mode in (None, "additive", "multiplicative"):
            rows = self.model.evaluate_grid(self.grid.points, x)
            cutoffs, _, _ = hdr_cutoff_batch(rows, self.grid, self._working_level())
        if mode is None:
            return dens > cutoffs
        if mode == "additive":
            return dens - cutoffs > self.calibration.adjustment
        if mode == "multiplicative":
            return dens / (cutoffs + self.calibration.gamma) > self.calibration.adjustment
        if mode == "negative-density":
            return dens > self.calibration.adjustment
        rows = self.model.evaluate_grid(self.grid.points, x)
        return mass_below(rows, self.grid, dens) >= self.calibration.adjustment


def chcds_predict(predictor: ConformalPredictor, x) -> PredictionSet:
    """Prediction set at ``x`` for any calibration mode (or unadjusted)."""
    return predictor.predict(x)
