"""Full-covariance Gaussian mixtures fit by EM, and a conditional
density estimator built from a joint and a marginal mixture fit."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import Dataset
from .cde import ConditionalDensityModel, _as_queries, _response_range

_LOG_2PI = np.log(2.0 * np.pi)


def _validate_parameters(weights, means, covariances):
    w = np.asarray(weights, dtype=float).ravel()
    mu = np.asarray(means, dtype=float)
    cov = np.asarray(covariances, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    k = w.shape[0]
    d = mu.shape[1]
    if d == 1 and cov.ndim in (1, 2):
        cov = cov.reshape(-1, 1, 1)
    if mu.shape[0] != k or cov.shape != (k, d, d):
        raise ValueError("weights, means, covariances have inconsistent shapes")
    if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must be positive and sum to 1")
    for s in cov:
        if not np.allclose(s, s.T, atol=1e-10):
            raise ValueError("covariances must be symmetric")
        if np.linalg.eigvalsh(s)[0] <= 0:
            raise ValueError("covariances must be positive definite")
    return w, mu, cov


def _log_gaussian(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of one Gaussian component at each row of ``points``."""
    chol = np.linalg.cholesky(cov)
    diff = points - mean
    z = solve_triangular(chol, diff.T, lower=True)
    quad = np.einsum("dn,dn->n", z, z)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    d = mean.shape[0]
    return -0.5 * (quad + logdet + d * _LOG_2PI)


@dataclass
class GaussianMixture:
    """A finite Gaussian mixture with full covariance matrices.

    ``log_likelihood_trace`` records the total data log likelihood at
    each EM iteration when the model came from ``fit_gaussian_mixture``;
    it is empty for models built directly from parameters.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = True

    @classmethod
    def from_parameters(cls, weights, means, covariances) -> "GaussianMixture":
        w, mu, cov = _validate_parameters(weights, means, covariances)
        return cls(w, mu, cov)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_dimensions(self) -> int:
        return self.means.shape[1]

    def component_log_density(self, points: np.ndarray) -> np.ndarray:
        """Per-component log densities, shape ``(n, K)``."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        cols = [
            _log_gaussian(pts, self.means[k], self.covariances[k])
            for k in range(self.n_components)
        ]
        return np.stack(cols, axis=1)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        comp = self.component_log_density(points) + np.log(self.weights)[None, :]
        peak = comp.max(axis=1)
        return peak + np.log(np.exp(comp - peak[:, None]).sum(axis=1))

    def density(self, points: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(points))


def _floor_covariances(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clip covariance eigenvalues from below to keep components proper."""
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, floor, None)
    return np.einsum("kij,kj,klj->kil", vecs, vals, vecs)


def _kmeans_seed(data: np.ndarray, k: int, rng: np.random.Generator, floor: float):
    """Initial mixture parameters from one k-means++ style pass.

    Centers are drawn on standardized data with probability proportional
    to squared distance from the chosen set; one hard assignment then
    yields starting weights, means, and covariances in the original
    coordinates.
    """
    n, d = data.shape
    scale = data.std(axis=0, ddof=0)
    scale[scale == 0] = 1.0
    std = (data - data.mean(axis=0)) / scale

    centers = [std[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            ((std[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2),
            axis=1,
        )
        total = d2.sum()
        if total <= 0:
            centers.append(std[rng.integers(n)])
            continue
        centers.append(std[rng.choice(n, p=d2 / total)])
    centers = np.asarray(centers)

    assign = np.argmin(
        ((std[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    weights = np.empty(k)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    global_cov = np.cov(data.T, ddof=0).reshape(d, d)
    for j in range(k):
        members = data[assign == j]
        weights[j] = max(members.shape[0], 1.0) / n
        if members.shape[0] == 0:
            means[j] = data[rng.integers(n)]
            covs[j] = global_cov
        else:
            means[j] = members.mean(axis=0)
            covs[j] = (
                np.cov(members.T, ddof=0).reshape(d, d)
                if members.shape[0] > 1
                else global_cov
            )
    weights /= weights.sum()
    return weights, means, _floor_covariances(covs, floor)


def _em_once(data, weights, means, covs, max_iters, tol, floor):
    """Run EM from the given starting point; returns a GaussianMixture."""
    n, d = data.shape
    k = weights.shape[0]
    trace: list[float] = []
    converged = False
    model = GaussianMixture(weights, means, covs, trace, converged)
    for iteration in range(max_iters + 1):
        comp = model.component_log_density(data) + np.log(model.weights)[None, :]
        peak = comp.max(axis=1)
        log_norm = peak + np.log(np.exp(comp - peak[:, None]).sum(axis=1))
        ll = float(log_norm.sum())
        trace.append(ll)
        if iteration > 0 and abs(ll - trace[-2]) <= tol * (1.0 + abs(ll)):
            converged = True
            break
        if iteration == max_iters:
            break
        resp = np.exp(comp - log_norm[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp.T @ data) / nk[:, None]
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = data - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
        covs = _floor_covariances(covs, floor)
        model = GaussianMixture(weights, means, covs, trace, converged)
    model.converged = converged
    model.log_likelihood_trace = trace
    return model


def fit_gaussian_mixture(
    data: np.ndarray,
    n_components: int,
    max_iters: int = 500,
    tol: float = 1e-8,
    covariance_floor: float = 1e-6,
    restarts: int = 3,
    seed: int = 0,
    init: tuple | None = None,
) -> GaussianMixture:
    """Fit a full-covariance Gaussian mixture by EM.

    Parameters
    ----------
    data : np.ndarray
        Observations, shape ``(n, d)`` (a 1-d array is treated as
        ``(n, 1)``).
    n_components : int
        Number of mixture components.
    max_iters, tol : int, float
        Iteration cap and relative log-likelihood tolerance. EM stops
        when the improvement falls below ``tol * (1 + |loglik|)``.
    covariance_floor : float
        Lower bound applied to covariance eigenvalues each M step.
    restarts : int
        Independent seeded starts; the fit with the best final log
        likelihood is returned. Ignored when ``init`` is given.
    seed : int
        Seeds the k-means++ style initialization.
    init : tuple, optional
        Explicit ``(weights, means, covariances)`` starting point. With
        ``max_iters=0`` the parameters are returned unchanged apart from
        a single log-likelihood evaluation.

    Returns
    -------
    GaussianMixture
        Best fit found. ``converged`` is False (with a warning) if no
        restart met the tolerance within ``max_iters``.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    n, d = arr.shape
    if n_components < 1:
        raise ValueError("n_components must be at least 1")
    if n < n_components:
        raise ValueError("fewer observations than mixture components")

    if init is not None:
        w, mu, cov = _validate_parameters(*init)
        best = _em_once(arr, w, mu, cov, max_iters, tol, covariance_floor)
    else:
        entropy = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        best = None
        for child in entropy.spawn(max(1, restarts)):
            rng = np.random.default_rng(child)
            w, mu, cov = _kmeans_seed(arr, n_components, rng, covariance_floor)
            fit = _em_once(arr, w, mu, cov, max_iters, tol, covariance_floor)
            if best is None or fit.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
                best = fit
    if max_iters > 0 and not best.converged:
        warnings.warn(
            "EM did not reach the log-likelihood tolerance within "
            f"{max_iters} iterations; returning the best iterate",
            RuntimeWarning,
        )
    return best


@dataclass
class GaussianMixtureCdeConfig:
    """Configuration for the joint/marginal mixture density ratio."""

    joint_components: int = 4
    marginal_components: int = 2
    max_iters: int = 500
    loglik_tol: float = 1e-8
    covariance_floor: float = 1e-6
    restarts: int = 3
    init_seed: int = 0
    pad_sd: float = 3.0


class GaussianMixtureCde(ConditionalDensityModel):
    """Conditional density as a ratio of two Gaussian mixture fits.

    The joint mixture is over ``(y, x)`` with the response as the first
    coordinate; the marginal mixture is over ``x`` alone. Conditioning
    each joint component on ``x`` gives a closed-form scalar Gaussian,
    so evaluation reduces to mixture algebra with no quadrature.
    """

    def __init__(
        self,
        joint: GaussianMixture,
        marginal: GaussianMixture,
        response_range: tuple[float, float],
    ):
        if joint.n_dimensions != marginal.n_dimensions + 1:
            raise ValueError(
                "joint mixture must have exactly one more dimension than the marginal"
            )
        self.joint = joint
        self.marginal = marginal
        self.n_covariates = marginal.n_dimensions
        self.response_range = response_range
        self._prepare_conditionals()

    def _prepare_conditionals(self):
        """Cache per-component conditional coefficients of the joint fit."""
        k = self.joint.n_components
        d = self.n_covariates
        self._mu_y = self.joint.means[:, 0]
        self._mu_x = self.joint.means[:, 1:]
        self._cov_xx = self.joint.covariances[:, 1:, 1:]
        cov_yx = self.joint.covariances[:, 0, 1:]
        # Regression coefficients and residual variances per component.
        self._beta = np.stack(
            [np.linalg.solve(self._cov_xx[j], cov_yx[j]) for j in range(k)]
        )
        var = self.joint.covariances[:, 0, 0] - np.einsum(
            "kj,kj->k", self._beta, cov_yx
        )
        self._cond_var = np.maximum(var, 1e-12)
        self._x_chol = np.linalg.cholesky(self._cov_xx)
        self._x_logdet = 2.0 * np.log(
            np.diagonal(self._x_chol, axis1=1, axis2=2)
        ).sum(axis=1)

    def _component_terms(self, xs: np.ndarray):
        """Log covariate factors and conditional means per component."""
        k = self.joint.n_components
        d = self.n_covariates
        diff = xs[:, None, :] - self._mu_x[None, :, :]
        quad = np.empty((xs.shape[0], k))
        for j in range(k):
            z = np.linalg.solve(self._x_chol[j], diff[:, j, :].T)
            quad[:, j] = np.einsum("dn,dn->n", z, z)
        log_ax = -0.5 * (quad + self._x_logdet[None, :] + d * _LOG_2PI)
        cond_mean = self._mu_y[None, :] + np.einsum(
            "kd,qkd->qk", self._beta, diff
        )
        return log_ax, cond_mean

    def _log_conditional(self, y_block: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Log conditional density; ``y_block`` shape ``(Q, G)`` vs ``xs`` ``(Q, d)``."""
        log_ax, cond_mean = self._component_terms(xs)
        log_w = np.log(self.joint.weights)[None, :]
        sd = np.sqrt(self._cond_var)[None, :]
        z = (y_block[:, :, None] - cond_mean[:, None, :]) / sd[:, None, :]
        log_norm = -0.5 * (z * z) - np.log(sd)[:, None, :] - 0.5 * _LOG_2PI
        comp = log_norm + (log_w + log_ax)[:, None, :]
        peak = comp.max(axis=2)
        log_joint = peak + np.log(np.exp(comp - peak[:, :, None]).sum(axis=2))
        log_marg = self.marginal.log_density(xs)
        return log_joint - log_marg[:, None]

    def evaluate_grid(self, y_grid: np.ndarray, x_batch) -> np.ndarray:
        xs = _as_queries(x_batch, self.n_covariates)
        grid = np.asarray(y_grid, dtype=float).ravel()
        y_block = np.broadcast_to(grid[None, :], (xs.shape[0], grid.shape[0]))
        return np.exp(self._log_conditional(y_block, xs))

    def evaluate_at(self, y_points: np.ndarray, x_batch) -> np.ndarray:
        xs = _as_queries(x_batch, self.n_covariates)
        ys = np.asarray(y_points, dtype=float).ravel()
        if ys.shape[0] != xs.shape[0]:
            raise ValueError("y_points and x_batch must have equal length")
        return np.exp(self._log_conditional(ys[:, None], xs))[:, 0]


def fit_gaussian_mixture_cde(
    train: Dataset, config: GaussianMixtureCdeConfig | None = None
) -> GaussianMixtureCde:
    """Fit joint and marginal mixtures on a dataset and form their ratio."""
    config = config or GaussianMixtureCdeConfig()
    joint_data = np.column_stack([train.y, train.x])
    seeds = np.random.SeedSequence(config.init_seed).spawn(2)
    joint = fit_gaussian_mixture(
        joint_data,
        config.joint_components,
        max_iters=config.max_iters,
        tol=config.loglik_tol,
        covariance_floor=config.covariance_floor,
        restarts=config.restarts,
        seed=seeds[0],
    )
    marginal = fit_gaussian_mixture(
        train.x,
        config.marginal_components,
        max_iters=config.max_iters,
        tol=config.loglik_tol,
        covariance_floor=config.covariance_floor,
        restarts=config.restarts,
        seed=seeds[1],
    )
    return GaussianMixtureCde(
        joint, marginal, _response_range(train.y, config.pad_sd)
    )
