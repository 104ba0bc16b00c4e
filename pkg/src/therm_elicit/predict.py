"""Posterior-predictive utility and the posterior over the best temperature.

Prediction conditions each posterior draw's virtual-grid utilities alone (the
dense grid carries virtually all information the observations add), with the
draw's own kernel hyperparameters:

    m(x*)     = k(x*, X~) K(X~, X~)^-1 u~
    sigma2(x*) = k(x*, x*) - k(x*, X~) K(X~, X~)^-1 k(X~, x*)

The best-temperature posterior is the histogram of per-draw argmax locations
over the grid, summarized by its discrete median and the smallest central
interval holding 95% of the mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import TEMP_RANGE, LatentState, VirtualGrid
from .sampler import PosteriorEnsemble

_JITTER = 1e-8


@dataclass(frozen=True)
class PredictiveMoments:
    """Mean and variance of u(x) under one posterior draw."""

    mean: float
    variance: float
    at: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")


@dataclass(frozen=True)
class XBestPosterior:
    """Distribution of the grid argmax of utility across posterior draws."""

    grid: VirtualGrid
    pmf: np.ndarray
    median: float
    ci95: tuple

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        object.__setattr__(self, "pmf", pmf)
        if pmf.shape != (len(self.grid),):
            raise ValueError("pmf length must match the grid")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
            raise ValueError("pmf must be non-negative and sum to 1")
        if not self.ci95[0] <= self.median <= self.ci95[1]:
            raise ValueError("median must lie inside ci95")


def grid_utilities(ensemble: PosteriorEnsemble) -> np.ndarray:
    """Virtual-grid utility draws as an (S, J) matrix."""
    if ensemble.layout is None:
        return np.asarray(ensemble.positions)
    return ensemble.positions[:, : ensemble.layout.J]


def _theta_u(ensemble: PosteriorEnsemble) -> tuple:
    lay = ensemble.layout
    if lay is None:
        raise ValueError("ensemble has no layout; hyperparameters unavailable")
    start = 4 * lay.J + lay.m
    lt = ensemble.positions[:, start : start + 2]
    return np.exp(lt[:, 0]), np.exp(lt[:, 1])


def _batched_moments(xs, u_mat, nu, rho, grid_x):
    """Means and variances of u at each x in xs for every draw.

    Shapes: xs (Q,), u_mat (S, J), nu/rho (S,), grid_x (J,).
    Returns means (S, Q) and variances (S, Q) clamped at 0.
    """
    xs = np.asarray(xs, dtype=np.float64)
    d2_grid = (grid_x[:, None] - grid_x[None, :]) ** 2
    d2_star = (xs[:, None] - grid_x[None, :]) ** 2
    r2 = 2.0 * rho[:, None, None] ** 2
    K = nu[:, None, None] * np.exp(-d2_grid[None] / r2)
    K = K + _JITTER * np.eye(grid_x.size)[None]
    k_star = nu[:, None, None] * np.exp(-d2_star[None] / r2)  # (S, Q, J)
    sol = np.linalg.solve(K, np.concatenate(
        [u_mat[:, :, None], np.swapaxes(k_star, 1, 2)], axis=2
    ))  # (S, J, 1+Q)
    means = np.einsum("sqj,sj->sq", k_star, sol[:, :, 0])
    quad = np.einsum("sqj,sjq->sq", k_star, sol[:, :, 1:])
    variances = np.maximum(nu[:, None] - quad, 0.0)
    return means, variances


def ensemble_utility_moments(
    xs, ensemble: PosteriorEnsemble, grid: VirtualGrid, check_bounds: bool = True
):
    """Batched predictive means/variances at xs, one row per posterior draw.

    `check_bounds=False` admits x just outside the temperature range, which the
    two-sided finite-difference classifier needs at the domain endpoints.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    if check_bounds:
        for x in xs:
            if not TEMP_RANGE[0] <= x <= TEMP_RANGE[1]:
                raise ValueError(f"temperature {x} outside {TEMP_RANGE}")
    nu, rho = _theta_u(ensemble)
    return _batched_moments(xs, grid_utilities(ensemble), nu, rho, grid.array)


def predictive_moments(
    x_star: float, sample: LatentState, grid: VirtualGrid
) -> PredictiveMoments:
    """Predictive mean and variance of u(x_star) under one posterior draw."""
    if not TEMP_RANGE[0] <= x_star <= TEMP_RANGE[1]:
        raise ValueError(f"temperature {x_star} outside {TEMP_RANGE}")
    nu, rho = np.exp(np.asarray(sample.log_theta_u, dtype=np.float64))
    means, variances = _batched_moments(
        np.asarray([x_star]),
        np.asarray(sample.u_virt, dtype=np.float64)[None],
        np.asarray([nu]),
        np.asarray([rho]),
        grid.array,
    )
    return PredictiveMoments(
        mean=float(means[0, 0]), variance=float(variances[0, 0]), at=float(x_star)
    )


def predictive_ensemble(
    x_star: float, ensemble: PosteriorEnsemble, grid: VirtualGrid
) -> list:
    """predictive_moments applied draw by draw, order preserved."""
    if not TEMP_RANGE[0] <= x_star <= TEMP_RANGE[1]:
        raise ValueError(f"temperature {x_star} outside {TEMP_RANGE}")
    means, variances = ensemble_utility_moments([x_star], ensemble, grid)
    return [
        PredictiveMoments(mean=float(m), variance=float(v), at=float(x_star))
        for m, v in zip(means[:, 0], variances[:, 0])
    ]


def xbest_posterior(ensemble: PosteriorEnsemble, grid: VirtualGrid) -> XBestPosterior:
    """Histogram of per-draw grid argmax, with discrete median and 95% interval."""
    u = grid_utilities(ensemble)
    if u.shape[0] == 0:
        raise ValueError("ensemble is empty")
    if u.shape[1] != len(grid):
        raise ValueError("utility draws do not match the grid")
    # np.argmax returns the first maximizer, i.e. the lowest temperature
    best = np.argmax(u, axis=1)
    pmf = np.bincount(best, minlength=len(grid)) / u.shape[0]
    cdf = np.cumsum(pmf)
    med_idx = int(np.searchsorted(cdf, 0.5))
    lo, hi = _smallest_central_interval(pmf, med_idx, 0.95)
    gx = grid.array
    return XBestPosterior(
        grid=grid,
        pmf=pmf,
        median=float(gx[med_idx]),
        ci95=(float(gx[lo]), float(gx[hi])),
    )


def _smallest_central_interval(pmf, med_idx: int, mass: float) -> tuple:
    """Narrowest contiguous index interval covering med_idx with >= mass."""
    best = (0, len(pmf) - 1)
    best_width = len(pmf)
    for lo in range(med_idx + 1):
        for hi in range(med_idx, len(pmf)):
            if pmf[lo : hi + 1].sum() >= mass - 1e-12:
                if hi - lo < best_width:
                    best, best_width = (lo, hi), hi - lo
                break
    return best


def ci_width_stop(xb: XBestPosterior, threshold: float = 1.0) -> bool:
    """True iff the 95% interval is strictly narrower than the threshold."""
    return xb.ci95[1] - xb.ci95[0] < threshold


def fraction_unimodal(ensemble: PosteriorEnsemble) -> float:
    """Share of draws whose grid utilities have exactly one local maximum."""
    u = grid_utilities(ensemble)
    falls = np.diff(u, axis=1) < 0  # (S, J-1), True where u decreases
    rising = np.concatenate([np.ones((u.shape[0], 1), bool), ~falls], axis=1)
    falling = np.concatenate([falls, np.ones((u.shape[0], 1), bool)], axis=1)
    n_max = np.sum(rising & falling, axis=1)
    return float(np.mean(n_max == 1))


def utility_quantiles(
    ensemble: PosteriorEnsemble, qs=(0.05, 0.5, 0.95)
) -> np.ndarray:
    """Per-grid-point quantiles of min-max normalized utility draws.

    Each draw is rescaled to [0, 1] before quantiles are taken (plots and the
    console compare shapes, not scales); a flat draw maps to 0.5 everywhere.
    Returns an array of shape (len(qs), J).
    """
    u = grid_utilities(ensemble).copy()
    span = u.max(axis=1) - u.min(axis=1)
    flat = span < 1e-12
    span[flat] = 1.0
    normalized = (u - u.min(axis=1)[:, None]) / span[:, None]
    normalized[flat] = 0.5
    return np.quantile(normalized, qs, axis=0)
