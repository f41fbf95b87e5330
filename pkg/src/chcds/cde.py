"""Conditional density estimators with a shared evaluation interface.

All estimators model the density of a scalar response given a covariate
vector. ``evaluate`` serves a single covariate query; ``evaluate_grid``
and ``evaluate_at`` are batched paths that the calibration and
experiment code rely on for throughput.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset

# Unnormalized kernel-weight sums below this are treated as underflow
# and trigger the nearest-training-point fallback.
_TINY_DENOMINATOR = 1e-300
_LOG_TINY = np.log(_TINY_DENOMINATOR)
_LOG_2PI = np.log(2.0 * np.pi)


def auto_bandwidth(sample: np.ndarray) -> float:
    """Bandwidth for a Gaussian kernel by a Silverman-type rule.

    Returns ``1.06 * min(sd, IQR / 1.34) * n ** (-1/5)`` where ``sd`` is
    the sample standard deviation. A zero IQR (heavily tied sample)
    falls back to the standard deviation alone so the bandwidth stays
    positive.

    Raises
    ------
    ValueError
        If the sample has fewer than two points or zero spread
        (degenerate sample).
    """
    values = np.asarray(sample, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("degenerate sample: need at least 2 points")
    sd = values.std(ddof=1)
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        raise ValueError("degenerate sample: zero spread")
    return 1.06 * spread * values.size ** (-0.2)


def _batch_bandwidths(samples: np.ndarray, fallback: float) -> np.ndarray:
    """Silverman-rule bandwidths along the last axis of ``samples``.

    Rows with zero spread take ``fallback`` instead of raising, since a
    locally constant neighborhood is recoverable.
    """
    n = samples.shape[-1]
    sd = samples.std(axis=-1, ddof=1)
    q75, q25 = np.percentile(samples, [75.0, 25.0], axis=-1)
    iqr = q75 - q25
    spread = np.where(iqr > 0, np.minimum(sd, iqr / 1.34), sd)
    bw = 1.06 * spread * n ** (-0.2)
    return np.where(bw > 0, bw, fallback)


# Pooled within-spread of an optimally split single Gaussian cluster,
# relative to its standard deviation: sqrt(1 - 2/pi).
_SPLIT_CONSISTENCY = float(np.sqrt(1.0 - 2.0 / np.pi))


def _two_cluster_spread(samples: np.ndarray) -> np.ndarray:
    """Cluster-robust spread along the last axis of ``samples``.

    Splits each sorted row into a left and right block at the cut that
    minimizes the pooled within-block sum of squares (the exact
    one-dimensional two-means solution), then rescales the pooled
    within-block standard deviation so the estimate is consistent for a
    single Gaussian cluster. For well-separated clusters the split lands
    in the gap and the estimate tracks the within-cluster scale instead
    of the cluster separation.
    """
    ys = np.sort(samples, axis=-1)
    n = ys.shape[-1]
    csum = np.cumsum(ys, axis=-1)
    csq = np.cumsum(ys * ys, axis=-1)
    left_n = np.arange(1, n)
    left_ss = csq[..., :-1] - csum[..., :-1] ** 2 / left_n
    right_sum = csum[..., -1:] - csum[..., :-1]
    right_sq = csq[..., -1:] - csq[..., :-1]
    right_ss = right_sq - right_sum**2 / (n - left_n)
    within = (left_ss + right_ss).min(axis=-1)
    # Clip tiny negative round-off from the cumulative-sum identity.
    within = np.maximum(within, 0.0)
    return np.sqrt(within / n) / _SPLIT_CONSISTENCY


def _as_queries(x, n_covariates: int) -> np.ndarray:
    """Normalize a batch of covariate queries to shape ``(Q, d)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # Ambiguity between one d-vector and a batch of scalars is
        # resolved by the model's covariate dimension.
        if n_covariates == 1:
            arr = arr[:, None]
        else:
            arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != n_covariates:
        raise ValueError(
            f"expected queries with {n_covariates} covariates, got shape "
            f"{np.asarray(x).shape}"
        )
    return arr


def _single_query(x, n_covariates: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] != n_covariates:
        raise ValueError(
            f"expected a single query with {n_covariates} covariates, got "
            f"shape {np.asarray(x).shape}"
        )
    return arr


class ConditionalDensityModel:
    """Interface shared by every conditional density estimator.

    Subclasses must set ``n_covariates`` and ``response_range`` and
    implement ``evaluate_grid``; the remaining methods have generic
    implementations in terms of it.
    """

    n_covariates: int
    response_range: tuple[float, float]

    def evaluate_grid(self, y_grid: np.ndarray, x_batch) -> np.ndarray:
        """Density rows, shape ``(Q, G)``: one grid evaluation per query."""
        raise NotImplementedError

    def evaluate(self, y, x) -> np.ndarray:
        """Density of the response values ``y`` at a single covariate ``x``."""
        xq = _single_query(x, self.n_covariates)
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        out = self.evaluate_grid(y_arr, xq[None, :])[0]
        return out if np.ndim(y) else float(out[0])

    def evaluate_at(self, y_points: np.ndarray, x_batch) -> np.ndarray:
        """Density of ``y_points[i]`` at query ``x_batch[i]``, shape ``(Q,)``."""
        xs = _as_queries(x_batch, self.n_covariates)
        ys = np.asarray(y_points, dtype=float).ravel()
        if ys.shape[0] != xs.shape[0]:
            raise ValueError("y_points and x_batch must have equal length")
        return np.array(
            [self.evaluate_grid(ys[i : i + 1], xs[i : i + 1])[0, 0]
             for i in range(xs.shape[0])]
        )


def _response_range(y: np.ndarray, pad_sd: float) -> tuple[float, float]:
    sd = y.std(ddof=1) if y.size > 1 else 1.0
    pad = pad_sd * sd
    return (float(y.min() - pad), float(y.max() + pad))


@dataclass
class KernelCdeConfig:
    """Configuration for the full-sample kernel estimator.

    ``None`` bandwidths are selected automatically per coordinate by
    ``auto_bandwidth``. ``pad_sd`` widens the reported response range
    beyond the observed response extremes, in response standard
    deviations.
    """

    response_bandwidth: float | None = None
    covariate_bandwidths: np.ndarray | None = None
    pad_sd: float = 3.0


@dataclass
class CdeDiagnostics:
    """Counters for defined numeric fallbacks taken during evaluation."""

    fallback_count: int = 0


class KernelCde(ConditionalDensityModel):
    """Product-kernel conditional density estimate.

    The estimate at query ``x`` is a weighted mixture of Gaussian bumps
    centered at the training responses, with weights proportional to a
    product of Gaussian covariate kernels:

        f(y | x) = sum_j w_j(x) K_b(y - Y_j) / sum_j w_j(x) .

    Queries whose unnormalized weight sum underflows (far outside the
    training covariates) are answered at the nearest training covariate
    instead, and the substitution is counted in ``diagnostics``.
    """

    def __init__(
        self,
        x: np.ndarray,
        y: np.ndarray,
        response_bandwidth: float,
        covariate_bandwidths: np.ndarray,
        pad_sd: float = 3.0,
    ):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x must be (n, d) aligned with y")
        b = float(response_bandwidth)
        a = np.asarray(covariate_bandwidths, dtype=float).ravel()
        if not np.isfinite(b) or b <= 0:
            raise ValueError("response bandwidth must be finite and positive")
        if a.shape[0] != self.x.shape[1] or not (np.isfinite(a).all() and (a > 0).all()):
            raise ValueError("covariate bandwidths must be finite and positive")
        self.response_bandwidth = b
        self.covariate_bandwidths = a
        self.n_covariates = self.x.shape[1]
        self.response_range = _response_range(self.y, pad_sd)
        self.diagnostics = CdeDiagnostics()

    def _log_weights(self, xs: np.ndarray) -> np.ndarray:
        """Log product-kernel weights, shape ``(Q, n_train)``."""
        a = self.covariate_bandwidths
        z = (xs[:, None, :] - self.x[None, :, :]) / a
        const = np.sum(np.log(a)) + 0.5 * a.size * _LOG_2PI
        return -0.5 * np.einsum("qnd,qnd->qn", z, z) - const

    def _normalized_weights(self, xs: np.ndarray) -> np.ndarray:
        """Row-normalized weights with the underflow fallback applied."""
        logw = self._log_weights(xs)
        peak = logw.max(axis=1)
        logsum = peak + np.log(np.exp(logw - peak[:, None]).sum(axis=1))
        bad = logsum < _LOG_TINY
        if bad.any():
            # Query too far from every training covariate: answer at the
            # nearest training covariate instead.
            self.diagnostics.fallback_count += int(bad.sum())
            far = xs[bad]
            d2 = ((far[:, None, :] - self.x[None, :, :]) ** 2).sum(axis=2)
            nearest = self.x[np.argmin(d2, axis=1)]
            logw[bad] = self._log_weights(nearest)
            peak = logw.max(axis=1)
        w = np.exp(logw - peak[:, None])
        return w / w.sum(axis=1, keepdims=True)

    def evaluate_grid(self, y_grid: np.ndarray, x_batch) -> np.ndarray:
        xs = _as_queries(x_batch, self.n_covariates)
        grid = np.asarray(y_grid, dtype=float).ravel()
        w = self._normalized_weights(xs)
        b = self.response_bandwidth
        z = (grid[None, :] - self.y[:, None]) / b
        phi = np.exp(-0.5 * z * z) / (b * np.sqrt(2.0 * np.pi))
        return w @ phi

    def evaluate_at(self, y_points: np.ndarray, x_batch) -> np.ndarray:
        xs = _as_queries(x_batch, self.n_covariates)
        ys = np.asarray(y_points, dtype=float).ravel()
        if ys.shape[0] != xs.shape[0]:
            raise ValueError("y_points and x_batch must have equal length")
        w = self._normalized_weights(xs)
        b = self.response_bandwidth
        z = (ys[:, None] - self.y[None, :]) / b
        phi = np.exp(-0.5 * z * z) / (b * np.sqrt(2.0 * np.pi))
        return np.einsum("qn,qn->q", w, phi)


def fit_kernel_cde(train: Dataset, config: KernelCdeConfig | None = None) -> KernelCde:
    """Fit a product-kernel conditional density estimate.

    Bandwidths left unset in ``config`` are chosen by ``auto_bandwidth``
    per coordinate, which requires at least two training points.
    """
    config = config or KernelCdeConfig()
    if len(train) < 1:
        raise ValueError("training set is empty")
    b = config.response_bandwidth
    if b is None:
        b = auto_bandwidth(train.y)
    a = config.covariate_bandwidths
    if a is None:
        a = np.array([auto_bandwidth(train.x[:, i]) for i in range(train.n_covariates)])
    else:
        a = np.broadcast_to(np.asarray(a, dtype=float).ravel(), (train.n_covariates,))
    return KernelCde(train.x, train.y, b, a, pad_sd=config.pad_sd)


@dataclass
class KnnKernelCdeConfig:
    """Configuration for the nearest-neighbor kernel estimator.

    ``spread_guard`` caps each neighborhood's response spread estimate
    by a two-cluster within-spread, so the response bandwidth tracks
    the within-cluster scale when a neighborhood's responses split into
    separated clusters. Disable it to reproduce the plain
    Silverman-rule bandwidths of the full-sample estimator.
    """

    k: int = 75
    pad_sd: float = 3.0
    spread_guard: bool = True
    # Rows evaluated per chunk in the grid path; bounds peak memory.
    chunk_rows: int = 128


class KnnKernelCde(ConditionalDensityModel):
    """Kernel conditional density estimate restricted to nearest neighbors.

    Each query keeps its ``k`` nearest training points by Euclidean
    covariate distance and applies the product-kernel estimate within
    that neighborhood, with bandwidths re-selected from the neighborhood
    sample. With ``spread_guard`` on, the response bandwidth uses the
    smaller of the Silverman-rule spread and a two-cluster within-spread
    so multi-cluster neighborhoods keep the within-cluster scale.
    Neighborhoods with zero spread in some coordinate fall back to the
    bandwidth selected on the full training set.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, k: int, pad_sd: float = 3.0,
                 spread_guard: bool = True, chunk_rows: int = 128):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        n = self.y.shape[0]
        if self.x.ndim != 2 or self.x.shape[0] != n:
            raise ValueError("x must be (n, d) aligned with y")
        if not 2 <= k <= n:
            raise ValueError(f"k must be in [2, n_train], got {k} with n_train {n}")
        self.k = int(k)
        self.n_covariates = self.x.shape[1]
        self.response_range = _response_range(self.y, pad_sd)
        self.spread_guard = bool(spread_guard)
        self.chunk_rows = int(chunk_rows)
        # Full-sample bandwidths back stop degenerate neighborhoods.
        self._fallback_b = auto_bandwidth(self.y)
        self._fallback_a = np.array(
            [auto_bandwidth(self.x[:, i]) for i in range(self.n_covariates)]
        )
        self.diagnostics = CdeDiagnostics()

    def _neighborhoods(self, xs: np.ndarray):
        """Neighbor responses, covariates, and normalized weights per query."""
        d2 = ((xs[:, None, :] - self.x[None, :, :]) ** 2).sum(axis=2)
        if self.k < self.y.shape[0]:
            idx = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
        else:
            idx = np.broadcast_to(np.arange(self.y.shape[0]), d2.shape).copy()
        # Training order within each neighborhood keeps reductions
        # reproducible and makes k = n_train match the full estimator.
        idx = np.sort(idx, axis=1)
        y_nbr = self.y[idx]
        x_nbr = self.x[idx]

        b = _batch_bandwidths(y_nbr, self._fallback_b)
        if self.spread_guard:
            guard = 1.06 * _two_cluster_spread(y_nbr) * self.k ** (-0.2)
            b = np.where(guard > 0, np.minimum(b, guard), b)
        a = np.stack(
            [_batch_bandwidths(x_nbr[:, :, i], self._fallback_a[i])
             for i in range(self.n_covariates)],
            axis=1,
        )

        z = (x_nbr - xs[:, None, :]) / a[:, None, :]
        const = np.log(a).sum(axis=1) + 0.5 * self.n_covariates * _LOG_2PI
        logw = -0.5 * np.einsum("qkd,qkd->qk", z, z) - const[:, None]
        peak = logw.max(axis=1)
        logsum = peak + np.log(np.exp(logw - peak[:, None]).sum(axis=1))
        bad = logsum < _LOG_TINY
        if bad.any():
            self.diagnostics.fallback_count += int(bad.sum())
            near = self.x[np.argmin(d2[bad], axis=1)]
            z_b = (x_nbr[bad] - near[:, None, :]) / a[bad][:, None, :]
            logw[bad] = -0.5 * np.einsum("qkd,qkd->qk", z_b, z_b) - const[bad][:, None]
            peak = logw.max(axis=1)
        w = np.exp(logw - peak[:, None])
        w /= w.sum(axis=1, keepdims=True)
        return y_nbr, b, w

    def evaluate_grid(self, y_grid: np.ndarray, x_batch) -> np.ndarray:
        xs = _as_queries(x_batch, self.n_covariates)
        grid = np.asarray(y_grid, dtype=float).ravel()
        y_nbr, b, w = self._neighborhoods(xs)
        out = np.empty((xs.shape[0], grid.shape[0]))
        step = max(1, self.chunk_rows)
        norm = 1.0 / (b * np.sqrt(2.0 * np.pi))
        for start in range(0, xs.shape[0], step):
            sl = slice(start, start + step)
            z = (grid[None, :, None] - y_nbr[sl, None, :]) / b[sl, None, None]
            phi = np.exp(-0.5 * z * z)
            out[sl] = np.einsum("qgk,qk->qg", phi, w[sl]) * norm[sl, None]
        return out

    def evaluate_at(self, y_points: np.ndarray, x_batch) -> np.ndarray:
        xs = _as_queries(x_batch, self.n_covariates)
        ys = np.asarray(y_points, dtype=float).ravel()
        if ys.shape[0] != xs.shape[0]:
            raise ValueError("y_points and x_batch must have equal length")
        y_nbr, b, w = self._neighborhoods(xs)
        z = (ys[:, None] - y_nbr) / b[:, None]
        phi = np.exp(-0.5 * z * z) / (b[:, None] * np.sqrt(2.0 * np.pi))
        return np.einsum("qk,qk->q", w, phi)


def fit_knn_kernel_cde(
    train: Dataset, config: KnnKernelCdeConfig | None = None
) -> KnnKernelCde:
    """Fit a nearest-neighbor kernel conditional density estimate."""
    config = config or KnnKernelCdeConfig()
    return KnnKernelCde(
        train.x, train.y, config.k, pad_sd=config.pad_sd,
        spread_guard=config.spread_guard, chunk_rows=config.chunk_rows,
    )
