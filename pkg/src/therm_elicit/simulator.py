"""Synthetic occupants, the elicitation loop, and evaluation metrics.

Ground-truth utilities are Gaussian bumps: unimodal on the temperature range,
peak position and sensitivity set per occupant. Amplitudes are scaled so the
utility derivative is about 2 half a degree from the peak, which makes
responses decisive away from the peak and genuinely noisy near it.

Responses are drawn from the normalized trinomial

    p(y | x) = Phi(nu_l * y * u'(x)) / Z,   y in {+1, 0, -1},  Z = 1.5

(the y=0 weight is Phi(0) = 0.5, so "satisfied" always carries mass 1/3).

The loop alternates query -> response -> posterior refit -> next-query
selection; every refit starts from the same deterministic initial state.
Every step reseeds its own generator from (seed, step), so trials are
reproducible and extending a run never perturbs earlier steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .acquisition import ElicitationHistory, candidate_set, select_next, should_stop
from .model import (
    TEMP_RANGE,
    ModelConstants,
    PreferenceDataset,
    VirtualGrid,
    default_init,
    preference_target,
)
from .predict import ensemble_utility_moments, grid_utilities, xbest_posterior
from .sampler import HmcConfig, run_hmc

STRATEGIES = ("eui", "random_search")

#: Reduced schedule for simulation studies; one refit in seconds instead of
#: the best part of a minute. The paper schedule stays the HmcConfig default.
FAST_HMC = HmcConfig(burn_in=600, retained=500, thin=2)


@dataclass(frozen=True)
class SyntheticOccupant:
    """Ground-truth preference bump: u(x) = amplitude * exp(-(x-peak)^2 / 2 width^2)."""

    peak: float
    width: float
    amplitude: float
    seed: int = 0

    def __post_init__(self):
        if not TEMP_RANGE[0] < self.peak < TEMP_RANGE[1]:
            raise ValueError(f"peak must lie inside {TEMP_RANGE}")
        if not self.width > 0 or not self.amplitude > 0:
            raise ValueError("width and amplitude must be positive")


OCCUPANTS = {
    1: SyntheticOccupant(peak=25.0, width=2.0, amplitude=16.5),
    2: SyntheticOccupant(peak=23.34, width=1.2, amplitude=6.3),
    3: SyntheticOccupant(peak=22.1, width=1.0, amplitude=4.5),
}


def true_utility(o: SyntheticOccupant, x: float) -> float:
    if not TEMP_RANGE[0] <= x <= TEMP_RANGE[1]:
        raise ValueError(f"temperature {x} outside {TEMP_RANGE}")
    return o.amplitude * float(np.exp(-((x - o.peak) ** 2) / (2 * o.width**2)))


def true_utility_derivative(o: SyntheticOccupant, x: float) -> float:
    if not TEMP_RANGE[0] <= x <= TEMP_RANGE[1]:
        raise ValueError(f"temperature {x} outside {TEMP_RANGE}")
    return -(x - o.peak) / o.width**2 * true_utility(o, x)


def response_probabilities(
    o: SyntheticOccupant, x: float, constants: ModelConstants = ModelConstants()
) -> tuple:
    """(p_plus, p_zero, p_minus): normalized probit weights at x."""
    from scipy.special import ndtr

    du = true_utility_derivative(o, x)
    w_plus = float(ndtr(constants.nu_l * du))
    w_minus = float(ndtr(-constants.nu_l * du))
    z = w_plus + 0.5 + w_minus
    return w_plus / z, 0.5 / z, w_minus / z


def sample_response(
    o: SyntheticOccupant,
    x: float,
    rng: np.random.Generator,
    constants: ModelConstants = ModelConstants(),
) -> int:
    """One ternary response at x: +1 warmer, 0 satisfied, -1 cooler."""
    p = response_probabilities(o, x, constants)
    return int(rng.choice((1, 0, -1), p=p))


@dataclass(frozen=True)
class TrialResult:
    """One elicitation run: step log, per-step best-temperature posteriors."""

    history: ElicitationHistory
    xbest_trace: tuple
    strategy: str
    xbest_samples: tuple  # per step, the per-draw argmax temperatures
    data: PreferenceDataset
    stop_reason: Optional[str]
    init_temp: float
    seed: int

    def __post_init__(self):
        if len(self.xbest_trace) != len(self.history):
            raise ValueError("one posterior snapshot per recorded step required")


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, step)))


def _step_hmc_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence((seed, step, 0x5EED)).generate_state(1)[0])


def run_elicitation(
    occupant: SyntheticOccupant,
    strategy: str = "eui",
    budget: int = 10,
    init_temp: float = 21.0,
    seed: int = 0,
    grid: Optional[VirtualGrid] = None,
    hmc: HmcConfig = HmcConfig(),
    early_stop: bool = True,
    constants: ModelConstants = ModelConstants(),
) -> TrialResult:
    """Full elicitation loop against a synthetic occupant.

    Deterministic given (occupant, strategy, budget, init_temp, seed, hmc):
    responses, the random-search draws, and every refit are keyed from the
    trial seed and step index. `early_stop=False` disables every stopping rule
    except the budget, which the comparison studies need.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    grid = grid or VirtualGrid()

    data = PreferenceDataset()
    history = ElicitationHistory()
    trace = []
    samples_per_step = []
    current = float(init_temp)
    stop_reason = None

    for step in range(1, budget + 1):
        rng = _step_rng(seed, step)
        response = sample_response(occupant, current, rng, constants)
        data = data.append(current, response)

        # fresh data-independent init per refit: chaining from the previous
        # ensemble's end state locks successive chains into one basin
        target = preference_target(data, grid, constants, pad_to=budget)
        cfg = replace(hmc, seed=_step_hmc_seed(seed, step))
        init = target.layout.pack(default_init(target.layout, grid, seed=seed))
        ensemble = run_hmc(target, init, cfg)

        xb = xbest_posterior(ensemble, grid)
        trace.append(xb)
        samples_per_step.append(grid.array[np.argmax(grid_utilities(ensemble), axis=1)])

        if strategy == "eui":
            next_t, eui_value, _ = select_next(current, ensemble, data, grid)
        else:
            next_t = float(rng.choice(candidate_set(current).temps))
            eui_value = None
        history = history.append(current, response, eui_value, ci95=xb.ci95)

        if early_stop:
            stop, stop_reason = should_stop(history, xb, budget)
        else:
            stop = len(history) >= budget
            stop_reason = "budget_exhausted" if stop else None
        if stop:
            break
        current = next_t

    return TrialResult(
        history=history,
        xbest_trace=tuple(trace),
        strategy=strategy,
        xbest_samples=tuple(samples_per_step),
        data=data,
        stop_reason=stop_reason,
        init_temp=float(init_temp),
        seed=int(seed),
    )


def aed(xbest_samples, x_true: float) -> float:
    """(1/S) * sqrt(sum of squared distances), exactly as the metric is defined."""
    xs = np.asarray(xbest_samples, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("aed needs at least one sample")
    return float(np.sqrt(np.sum((xs - x_true) ** 2)) / xs.size)


def classify(ensemble, x: float, grid: VirtualGrid) -> int:
    """Majority predictive-derivative sign at x: +1 warmer-preferred, else -1.

    The sign for each draw comes from a central difference of the predictive
    mean with h = 0.01, evaluated without range checks so the stencil works at
    the domain endpoints. An exact 50/50 split classifies as -1.
    """
    if not TEMP_RANGE[0] <= x <= TEMP_RANGE[1]:
        raise ValueError(f"temperature {x} outside {TEMP_RANGE}")
    h = 0.01
    means, _ = ensemble_utility_moments(
        [x + h, x - h], ensemble, grid, check_bounds=False
    )
    frac_pos = float(np.mean(means[:, 0] - means[:, 1] > 0))
    return 1 if frac_pos > 0.5 else -1


def hit_rate_accuracy(predicted, actual) -> float:
    """Fraction of matching labels."""
    if len(predicted) == 0 or len(predicted) != len(actual):
        raise ValueError("predicted and actual must be non-empty, equal-length")
    return float(np.mean(np.asarray(predicted) == np.asarray(actual)))


def trial_records(trial: TrialResult) -> list:
    """Step log as JSON-ready dicts, one per step."""
    out = []
    n = len(trial.history)
    for i, (step, xb) in enumerate(zip(trial.history.steps, trial.xbest_trace)):
        out.append({
            "step": i + 1,
            "query_temp": step.query_temp,
            "response": step.response,
            "eui": step.eui,
            "eui_ratio": step.eui_ratio,
            "ci95_low": xb.ci95[0],
            "ci95_high": xb.ci95[1],
            "xbest_median": xb.median,
            "stop_reason": trial.stop_reason if i + 1 == n else None,
        })
    return out
