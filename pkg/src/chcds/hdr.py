"""Highest-density-region machinery on a fixed response grid.

Density rows are treated as piecewise-linear functions of the response.
All masses (total, above a cutoff, below a value, over a set) integrate
that same interpolant, so cutoff search, level-set extraction, and set
mass agree with each other to floating-point accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MASS_TOLERANCE = 1e-4
MAX_BISECTION_STEPS = 60


@dataclass(frozen=True)
class ResponseGrid:
    """An evenly spaced evaluation grid over a response interval."""

    lo: float
    hi: float
    n_points: int = 2048

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("grid upper bound must exceed lower bound")
        if self.n_points < 16:
            raise ValueError("grid needs at least 16 points")
        object.__setattr__(
            self, "_points", np.linspace(self.lo, self.hi, self.n_points)
        )

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def length(self) -> float:
        return self.hi - self.lo


def grid_for_model(model, n_points: int = 2048) -> ResponseGrid:
    """A grid spanning the model's reported response range."""
    lo, hi = model.response_range
    return ResponseGrid(lo, hi, n_points)


@dataclass(frozen=True)
class PredictionSet:
    """A finite union of response intervals, possibly flagged infinite.

    ``infinite`` marks the degenerate case where the acceptance
    threshold was non-positive, so every response is accepted; the
    stored interval is then the whole grid range and ``total_length``
    is the grid length.
    """

    intervals: np.ndarray
    infinite: bool = False
    total_length: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        arr = np.asarray(self.intervals, dtype=float).reshape(-1, 2)
        if arr.shape[0]:
            if (arr[:, 1] < arr[:, 0]).any():
                raise ValueError("interval upper bounds must not precede lower bounds")
            if (arr[1:, 0] < arr[:-1, 1]).any():
                raise ValueError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", arr)
        if self.total_length is None:
            object.__setattr__(
                self, "total_length", float((arr[:, 1] - arr[:, 0]).sum())
            )

    def contains(self, y) -> np.ndarray | bool:
        """Membership of ``y`` (scalar or array) in the set."""
        ys = np.asarray(y, dtype=float)
        if self.infinite:
            out = np.ones(ys.shape, dtype=bool)
        elif self.intervals.shape[0] == 0:
            out = np.zeros(ys.shape, dtype=bool)
        else:
            inside = (ys[..., None] >= self.intervals[:, 0]) & (
                ys[..., None] <= self.intervals[:, 1]
            )
            out = inside.any(axis=-1)
        return out if ys.ndim else bool(out)


def total_mass(rows: np.ndarray, grid: ResponseGrid) -> np.ndarray:
    """Trapezoid mass of each density row over the whole grid."""
    rows = np.atleast_2d(rows)
    return grid.spacing * (0.5 * (rows[:, 0] + rows[:, -1]) + rows[:, 1:-1].sum(axis=1))


def mass_above(rows: np.ndarray, grid: ResponseGrid, cutoffs: np.ndarray) -> np.ndarray:
    """Mass of ``{y: f(y) > c}`` under the piecewise-linear interpolant.

    ``rows`` has shape ``(Q, G)`` and ``cutoffs`` shape ``(Q,)``. Cells
    straddling the cutoff contribute the exact area of the interpolant
    above it, so the result is continuous and strictly decreasing in the
    cutoff wherever the density exceeds it.
    """
    rows = np.atleast_2d(rows)
    c = np.asarray(cutoffs, dtype=float).reshape(-1, 1)
    left = rows[:, :-1]
    right = rows[:, 1:]
    low = np.minimum(left, right)
    high = np.maximum(left, right)
    full = low > c
    crossing = (~full) & (high > c)
    span = np.where(high > low, high - low, 1.0)
    # A vanishing span inside a crossing cell can overflow the division;
    # the clip makes the resulting contribution correct regardless.
    with np.errstate(over="ignore", invalid="ignore"):
        t = np.clip((c - low) / span, 0.0, 1.0)
    contrib = np.where(full, 0.5 * (left + right), 0.0)
    contrib += np.where(crossing, (1.0 - t) * 0.5 * (c + high), 0.0)
    return grid.spacing * contrib.sum(axis=1)


def mass_below(rows: np.ndarray, grid: ResponseGrid, values: np.ndarray) -> np.ndarray:
    """Mass of ``{y: f(y) <= v}``: the complement of ``mass_above``."""
    rows = np.atleast_2d(rows)
    return total_mass(rows, grid) - mass_above(rows, grid, values)


def hdr_cutoff_batch(
    rows: np.ndarray,
    grid: ResponseGrid,
    level: float,
    tol: float = MASS_TOLERANCE,
    max_steps: int = MAX_BISECTION_STEPS,
):
    """Highest-density-region cutoffs for a batch of density rows.

    The retained-mass target for each row is ``level`` times the row's
    total grid mass, so rows that are not normalized (for instance a
    ratio of two separately fit densities) are handled scale-invariantly;
    for a normalized density this is the plain mass level. Bisection
    finds the largest cutoff whose retained mass still reaches the
    target. Returns ``(cutoffs, masses, converged)`` where ``masses`` is
    the retained mass at the returned cutoff (always at least the
    target) and ``converged`` is False where the mass gap exceeds
    ``tol`` (scaled by total mass) after ``max_steps`` steps, as happens
    on density plateaus.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be strictly between 0 and 1")
    rows = np.atleast_2d(rows)
    q = rows.shape[0]
    if (rows < 0).any():
        raise ValueError("density rows must be non-negative")
    zero = np.zeros(q)
    mass_at_zero = mass_above(rows, grid, zero)
    if (mass_at_zero <= 0).any():
        raise ValueError("a density row is identically zero on the grid")
    target = level * mass_at_zero
    tolerance = tol * mass_at_zero
    lo = zero
    mass_lo = mass_at_zero
    hi = rows.max(axis=1)
    # Rows freeze individually once within tolerance, so each cutoff is
    # a pure function of its own density row; results cannot depend on
    # which other rows happen to share the batch.
    for _ in range(max_steps):
        active = mass_lo - target > tolerance
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        mass_mid = mass_above(rows, grid, mid)
        keep = mass_mid >= target
        lo = np.where(active & keep, mid, lo)
        mass_lo = np.where(active & keep, mass_mid, mass_lo)
        hi = np.where(active & ~keep, mid, hi)
    converged = mass_lo - target <= tolerance
    return lo, mass_lo, converged


@dataclass(frozen=True)
class CutoffResult:
    """A density cutoff with the mass it retains.

    ``converged`` is False when the mass at the cutoff could not reach
    the target tolerance (plateau in the density); the cutoff is then
    the largest value whose mass still reaches the level.
    """

    cutoff: float
    mass: float
    converged: bool


def hdr_cutoff(
    model,
    x,
    level: float,
    grid: ResponseGrid,
    tol: float = MASS_TOLERANCE,
) -> CutoffResult:
    """Density cutoff whose region ``{y: f(y|x) > c}`` has mass ``level``."""
    row = np.atleast_2d(model.evaluate(grid.points, x))
    cut, mass, ok = hdr_cutoff_batch(row, grid, level, tol=tol)
    return CutoffResult(float(cut[0]), float(mass[0]), bool(ok[0]))


def level_set_from_density(
    row: np.ndarray,
    grid: ResponseGrid,
    threshold: float,
    inclusive: bool = False,
) -> PredictionSet:
    """The set where a density row exceeds a threshold, as intervals.

    Interval endpoints are linearly interpolated between grid points. A
    non-positive threshold accepts everything: with strict membership
    the result is the whole grid range flagged infinite, while with
    ``inclusive`` membership it is the whole grid as an ordinary set
    (densities are non-negative, so ``{f >= 0}`` is simply everything).
    """
    if threshold <= 0:
        return PredictionSet(
            np.array([[grid.lo, grid.hi]]),
            infinite=not inclusive,
            total_length=grid.length,
        )
    diff = np.asarray(row, dtype=float).ravel() - threshold
    above = diff >= 0 if inclusive else diff > 0
    if not above.any():
        return PredictionSet(np.empty((0, 2)))

    points = grid.points
    bounds: list[float] = []
    if above[0]:
        bounds.append(points[0])
    flips = np.nonzero(above[:-1] != above[1:])[0]
    for i in flips:
        t = diff[i] / (diff[i] - diff[i + 1])
        bounds.append(points[i] + t * grid.spacing)
    if above[-1]:
        bounds.append(points[-1])
    pairs = np.asarray(bounds).reshape(-1, 2)
    return PredictionSet(pairs)


def level_set(model, x, threshold: float, grid: ResponseGrid) -> PredictionSet:
    """Prediction set ``{y: f(y|x) > threshold}`` on the grid."""
    row = np.asarray(model.evaluate(grid.points, x))
    return level_set_from_density(row, grid, threshold)


def _interp_antiderivative(row: np.ndarray, grid: ResponseGrid, points: np.ndarray):
    """Integral of the piecewise-linear interpolant from grid.lo to each point."""
    row = np.asarray(row, dtype=float).ravel()
    dy = grid.spacing
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (row[:-1] + row[1:]) * dy)])
    pos = np.clip((np.asarray(points) - grid.lo) / dy, 0.0, row.shape[0] - 1)
    idx = np.minimum(pos.astype(int), row.shape[0] - 2)
    frac = pos - idx
    f0 = row[idx]
    f1 = row[idx + 1]
    return cum[idx] + dy * (f0 * frac + 0.5 * (f1 - f0) * frac * frac)


def set_mass_from_density(
    row: np.ndarray, grid: ResponseGrid, prediction_set: PredictionSet
) -> float:
    """Mass of a density row over a prediction set's intervals."""
    if prediction_set.infinite:
        return float(total_mass(row, grid)[0])
    if prediction_set.intervals.shape[0] == 0:
        return 0.0
    upper = _interp_antiderivative(row, grid, prediction_set.intervals[:, 1])
    lower = _interp_antiderivative(row, grid, prediction_set.intervals[:, 0])
    return float((upper - lower).sum())


def set_mass(model, x, prediction_set: PredictionSet, grid: ResponseGrid) -> float:
    """Mass of ``f(.|x)`` over a prediction set's intervals."""
    row = np.asarray(model.evaluate(grid.points, x))
    return set_mass_from_density(row, grid, prediction_set)


def modal_threshold_for_mass_below(
    row: np.ndarray,
    grid: ResponseGrid,
    target: float,
    tol: float = MASS_TOLERANCE,
    max_steps: int = MAX_BISECTION_STEPS,
) -> float:
    """Smallest density value ``v`` with ``mass_below(row, v) >= target``.

    ``mass_below`` is non-decreasing in ``v``, so bisection applies. The
    returned value thresholds the density from above: ``{f >= v}`` is
    the smallest highest-density region whose complement holds at least
    ``target`` mass.
    """
    row = np.atleast_2d(np.asarray(row, dtype=float))
    if target <= 0:
        return 0.0  # mass_below(0) is already 0, so 0 meets the target exactly
    lo = np.array([0.0])
    hi = np.array([row.max()])
    below_hi = mass_below(row, grid, hi)
    if below_hi[0] < target:
        return float(hi[0])
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        below = mass_below(row, grid, mid)
        if abs(below[0] - target) <= tol:
            return float(mid[0])
        if below[0] >= target:
            hi = mid
        else:
            lo = mid
    return float(hi[0])
