"""Expected-utility-improvement acquisition, query selection, and stopping.

For each posterior draw, the incumbent is the best posterior-predictive mean
over the temperatures already queried; the conditional improvement at a
candidate x is the standard closed form

    EUI = (m - b) Phi(z) + sigma phi(z),  z = (m - b) / sigma

and the acquisition value is its average over draws. Candidates live on the
0.5 degree lattice within +-3 degrees of the current temperature, clipped to
the valid range, with the current temperature itself excluded.

Stopping combines the practical rules (low absolute EUI, EUI rising while the
occupant reports satisfied at an unchanged temperature, budget exhaustion)
with the credible-interval width rule; the first rule to fire, in that order,
is reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .model import TEMP_RANGE, LatentState, PreferenceDataset, VirtualGrid
from .predict import (
    XBestPosterior,
    ci_width_stop,
    ensemble_utility_moments,
    predictive_moments,
)
from .sampler import PosteriorEnsemble

_LATTICE = np.arange(TEMP_RANGE[0], TEMP_RANGE[1] + 0.25, 0.5)
_SIGMA_FLOOR = 1e-10
_TOL = 1e-9

STOP_REASONS = ("eui_low", "eui_ratio", "budget_exhausted", "ci_width")


@dataclass(frozen=True)
class CandidateSet:
    """Temperatures eligible for the next query, in increasing order."""

    temps: tuple

    def __len__(self):
        return len(self.temps)

    def __iter__(self):
        return iter(self.temps)


def candidate_set(current: float) -> CandidateSet:
    """Lattice points within 3 degrees of `current`, excluding `current`."""
    if not TEMP_RANGE[0] <= current <= TEMP_RANGE[1]:
        raise ValueError(f"temperature {current} outside {TEMP_RANGE}")
    near = np.abs(_LATTICE - current) <= 3.0 + _TOL
    not_current = np.abs(_LATTICE - current) > _TOL
    return CandidateSet(temps=tuple(float(x) for x in _LATTICE[near & not_current]))


def _phi(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def _improvement(imp, sigma):
    """E[max(gain, 0)] for gain ~ N(imp, sigma^2), elementwise.

    Below the sigma floor the Gaussian collapses to its mean and the
    expectation is just the positive part of imp.
    """
    imp = np.asarray(imp, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    z = imp / np.maximum(sigma, _SIGMA_FLOOR)
    smooth = imp * ndtr(z) + sigma * _phi(z)
    ei = np.where(sigma < _SIGMA_FLOOR, np.maximum(imp, 0.0), smooth)
    return np.maximum(ei, 0.0)


def _eui_matrix(xs, ensemble, observed_temps, grid):
    """Conditional EUIs, one row per draw and one column per x in xs."""
    means_obs, _ = ensemble_utility_moments(observed_temps, ensemble, grid)
    b = means_obs.max(axis=1)
    m, v = ensemble_utility_moments(xs, ensemble, grid)
    return _improvement(m - b[:, None], np.sqrt(v))


def u_best_hat(sample: LatentState, observed_temps: Sequence[float],
               grid: VirtualGrid) -> float:
    """Best posterior-predictive mean over the queried temperatures."""
    if len(observed_temps) == 0:
        raise ValueError("u_best_hat needs at least one observed temperature")
    return max(
        predictive_moments(float(x), sample, grid).mean for x in observed_temps
    )


def eui_conditional(x_star: float, sample: LatentState,
                    observed_temps: Sequence[float], grid: VirtualGrid) -> float:
    """Expected improvement at x_star under a single posterior draw."""
    pm = predictive_moments(x_star, sample, grid)
    b = u_best_hat(sample, observed_temps, grid)
    return float(_improvement(pm.mean - b, np.sqrt(pm.variance)))


def eui(x_star: float, ensemble: PosteriorEnsemble,
        observed_temps: Sequence[float], grid: VirtualGrid) -> float:
    """Ensemble-averaged expected utility improvement at x_star."""
    if len(ensemble) == 0:
        raise ValueError("eui needs a non-empty ensemble")
    if len(observed_temps) == 0:
        raise ValueError("eui needs at least one observed temperature")
    return float(_eui_matrix([x_star], ensemble, observed_temps, grid).mean())


def select_next(current: float, ensemble: PosteriorEnsemble,
                data: PreferenceDataset, grid: VirtualGrid):
    """Pick the EUI-maximizing candidate; ties go to the lowest temperature.

    Returns (next_temp, its EUI, {candidate: EUI}) so callers can log or
    display the whole acquisition profile.
    """
    if len(ensemble) == 0 or len(data) == 0:
        raise ValueError("select_next needs a non-empty ensemble and dataset")
    cands = candidate_set(current)
    values = _eui_matrix(list(cands), ensemble, data.temps, grid).mean(axis=0)
    eui_map = {t: float(v) for t, v in zip(cands, values)}
    best_idx = 0
    for i in range(1, len(values)):
        if values[i] > values[best_idx]:
            best_idx = i
    return cands.temps[best_idx], float(values[best_idx]), eui_map


@dataclass(frozen=True)
class StepRecord:
    """One elicitation step: what was asked, what came back, and why."""

    query_temp: float
    response: Optional[int]
    eui: Optional[float]
    eui_ratio: Optional[float]
    ci95: Optional[tuple] = None
    timestamp: Optional[float] = None


@dataclass(frozen=True)
class ElicitationHistory:
    """Ordered step records; ratios are derived on append, never stored twice."""

    steps: tuple = ()

    def __len__(self):
        return len(self.steps)

    def append(self, query_temp: float, response: Optional[int],
               eui_value: Optional[float], ci95: Optional[tuple] = None,
               timestamp: Optional[float] = None) -> "ElicitationHistory":
        """Add a step; eui_ratio = previous EUI / this EUI (0 denominator -> inf)."""
        ratio = None
        if self.steps and eui_value is not None:
            prev = self.steps[-1].eui
            if prev is not None:
                ratio = prev / eui_value if eui_value > 0 else float("inf")
        record = StepRecord(
            query_temp=float(query_temp),
            response=None if response is None else int(response),
            eui=eui_value,
            eui_ratio=ratio,
            ci95=ci95,
            timestamp=timestamp,
        )
        return ElicitationHistory(self.steps + (record,))


def should_stop(history: ElicitationHistory, xb: Optional[XBestPosterior],
                budget: int, ci_threshold: float = 1.0):
    """First stopping rule satisfied, in fixed precedence order.

    (a) three consecutive EUIs below 0.01, (b) two consecutive EUI ratios
    below 1, both requiring the last two queries to repeat one temperature
    with satisfied responses; (c) the step budget is spent; (d) the 95%
    credible interval for the best temperature is narrower than the threshold.
    """
    if len(history) == 0:
        raise ValueError("should_stop needs at least one recorded step")
    steps = history.steps

    def settled():
        a, b = steps[-2], steps[-1]
        return (abs(a.query_temp - b.query_temp) < _TOL
                and a.response == 0 and b.response == 0)

    if len(steps) >= 3 and settled():
        last3 = [s.eui for s in steps[-3:]]
        if all(e is not None and e < 0.01 for e in last3):
            return True, "eui_low"
    if len(steps) >= 2 and settled():
        ratios = [s.eui_ratio for s in steps[-2:]]
        if all(r is not None and r < 1.0 for r in ratios):
            return True, "eui_ratio"
    if len(steps) >= budget:
        return True, "budget_exhausted"
    if xb is not None and ci_width_stop(xb, ci_threshold):
        return True, "ci_width"
    return False, None
