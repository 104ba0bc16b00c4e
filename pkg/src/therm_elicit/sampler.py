"""Hamiltonian Monte Carlo over the latent state, plus chain diagnostics.

One HMC iteration (momentum draw, leapfrog trajectory, accept step) is a
single JIT-compiled kernel whose density function and trajectory length are
static arguments; with the density's data arrays padded to a fixed shape, every
posterior refit of an elicitation run reuses one compiled trace. The mass
matrix is the identity; the step size adapts toward a target acceptance rate
during burn-in with a decaying Robbins-Monro gain, then stays frozen.

Targets may offer two parameterizations. The chain runs in state space by
default: a single state-space chain relaxes into the basin of derivative sign
patterns the responses support and reports the concentrated posterior that
the elicitation loop's convergence behavior relies on. A target that exposes
a whitened triple (`sampling_logpdf`, `to_state`, `from_state`) is instead
sampled in whitened coordinates, where prior correlations are unit-scale and
long chains traverse every sign-pattern basin; that is the reference regime
for equilibrium studies and the default for the Gaussian-likelihood
regression targets.

Randomness is keyed per iteration by folding the iteration index into the seed
key, so extending a run (larger `retained`) leaves the earlier draws bitwise
unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property, partial

import jax
import jax.numpy as jnp
import numpy as np

from .kernel import NumericalError
from .model import LatentState, StateLayout

# half-width (in nats) of the log-uniform per-trajectory step-size jitter
LOG_EPS_JITTER = math.log(3.0)


@dataclass(frozen=True)
class HmcConfig:
    """Schedule and integrator settings; defaults give burn 5000, keep 3000, thin 3."""

    burn_in: int = 5000
    retained: int = 3000
    thin: int = 3
    leapfrog_steps: int = 20
    step_size: float = 0.01
    step_size_min: float = 0.0
    step_size_max: float = math.inf
    adapt_target_accept: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        for name in ("retained", "thin", "leapfrog_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.step_size_min < 0:
            raise ValueError("step_size_min must be >= 0")
        if self.step_size_max <= self.step_size_min:
            raise ValueError("step_size_max must exceed step_size_min")
        if not 0 < self.adapt_target_accept < 1:
            raise ValueError("adapt_target_accept must lie in (0, 1)")

    @property
    def total_iterations(self) -> int:
        return self.burn_in + self.retained * self.thin


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Retained draws as rows of `positions`, immutable once constructed."""

    positions: np.ndarray
    config: HmcConfig
    accept_rate: float
    layout: StateLayout | None = None
    divergences: int = 0
    step_size_final: float = 0.0

    def __len__(self):
        return self.positions.shape[0]

    @property
    def samples(self):
        """Draws as LatentState objects when a layout is attached, else rows."""
        if self.layout is not None:
            return [self.layout.unpack(row) for row in self.positions]
        return [row for row in self.positions]

    @cached_property
    def diagnostics(self) -> dict:
        """Per-coordinate effective sample size plus degeneracy flags."""
        ess = np.empty(self.positions.shape[1])
        degenerate = np.zeros(self.positions.shape[1], dtype=bool)
        for j in range(self.positions.shape[1]):
            ess[j], degenerate[j] = effective_sample_size(
                self.positions[:, j], return_degenerate=True
            )
        return {"ess": ess, "degenerate": degenerate}


def _density_parts(target):
    """Split a target into (traced density fn, extra traced args)."""
    fn = getattr(target, "log_density", None)
    if fn is not None:
        return fn, tuple(getattr(target, "args", ()))
    if callable(target):
        return target, ()
    raise TypeError("target must be callable or expose .log_density")


@partial(jax.jit, static_argnums=(0, 1))
def _hmc_step(fn, n_leapfrog, z, logp, eps, key, args):
    """One momentum draw, leapfrog trajectory, and Metropolis decision."""
    k_mom, k_acc, k_eps = jax.random.split(key, 3)
    p0 = jax.random.normal(k_mom, z.shape)
    grad = jax.grad(fn)

    # jitter the step log-uniformly over [eps/3, 3*eps]: fixed-length
    # trajectories cannot lock onto a periodic orbit, and because the target's
    # curvature spans orders of magnitude between the sign-link walls and the
    # open basins, a spread of step sizes lets large proposals carry the chain
    # where the geometry is soft while the small end keeps stiff pockets moving
    eps = eps * jnp.exp(jax.random.uniform(k_eps, minval=-LOG_EPS_JITTER,
                                           maxval=LOG_EPS_JITTER))
    q = z
    p = p0 + 0.5 * eps * grad(q, *args)

    def drift_kick(_, qp):
        q, p = qp
        q = q + eps * p
        p = p + eps * grad(q, *args)
        return q, p

    q, p = jax.lax.fori_loop(0, n_leapfrog - 1, drift_kick, (q, p))
    q = q + eps * p
    p = p + 0.5 * eps * grad(q, *args)

    logp_new = fn(q, *args)
    h0 = -logp + 0.5 * jnp.dot(p0, p0)
    h1 = -logp_new + 0.5 * jnp.dot(p, p)
    delta = h0 - h1
    divergent = ~jnp.isfinite(h1)
    alpha = jnp.where(divergent, 0.0, jnp.exp(jnp.minimum(delta, 0.0)))
    accept = jnp.logical_and(
        ~divergent, jnp.log(jax.random.uniform(k_acc)) < delta
    )
    z_out = jnp.where(accept, q, z)
    logp_out = jnp.where(accept, logp_new, logp)
    return z_out, logp_out, accept, alpha, divergent


def run_hmc(target, init, cfg: HmcConfig = HmcConfig()) -> PosteriorEnsemble:
    """Sample the target posterior starting from `init`.

    `target` is a callable log density over a flat vector, or an object with
    `.log_density` (and optionally `.args` for extra traced arrays and
    `.layout` for structured sample access). `init` is a flat vector or a
    LatentState when the target carries a layout; both are in state
    coordinates. When the target also provides a whitened parameterization
    (`sampling_logpdf` with `to_state`/`from_state`), the chain runs in the
    whitened space and the returned positions are mapped back to states.
    """
    fn, args = _density_parts(target)
    layout = getattr(target, "layout", None)
    if isinstance(init, LatentState):
        if layout is None:
            raise ValueError("LatentState init requires a target with a layout")
        z0 = layout.pack(init)
    else:
        z0 = np.asarray(init, dtype=np.float64)
        if z0.ndim != 1:
            raise ValueError("init must be a flat vector")

    z = jnp.asarray(z0)
    logp = fn(z, *args)
    if not np.isfinite(float(logp)):
        raise ValueError("target log density is not finite at the initial state")

    to_state = getattr(target, "to_state", None)
    from_state = getattr(target, "from_state", None)
    whitened = getattr(target, "sampling_logpdf", None)
    if whitened is not None and to_state is not None and from_state is not None:
        fn = whitened
        z = jnp.asarray(from_state(z0))
        logp = fn(z, *args)
        if not np.isfinite(float(logp)):
            raise ValueError("whitened log density is not finite at the initial state")
    else:
        to_state = None

    key = jax.random.PRNGKey(cfg.seed)
    log_eps = math.log(cfg.step_size)
    burn_divergent = 0
    post_divergent = 0
    accepted_post = 0
    positions = np.empty((cfg.retained, z0.size))
    kept = 0

    for i in range(cfg.total_iterations):
        k = jax.random.fold_in(key, i)
        z, logp, acc, alpha, div = _hmc_step(
            fn, cfg.leapfrog_steps, z, logp, math.exp(log_eps), k, args
        )
        if i < cfg.burn_in:
            # decaying-gain stochastic step-size adjustment, frozen after
            # burn-in; the early gain is near 1 so a badly scaled initial step
            # collapses within tens of iterations instead of hundreds
            log_eps += (float(alpha) - cfg.adapt_target_accept) / (1.0 + i) ** 0.75
            # bounds against runaway adaptation: near the saturated sign-link
            # walls the local curvature is orders of magnitude stiffer than the
            # bulk, so a chain that adapts to a wall pocket stops moving for the
            # rest of the run (floor), while a chain that adapts inside one wide
            # basin hops basins during sampling instead of resolving the one it
            # is in (ceiling)
            if cfg.step_size_min > 0:
                log_eps = max(log_eps, math.log(cfg.step_size_min))
            if math.isfinite(cfg.step_size_max):
                log_eps = min(log_eps, math.log(cfg.step_size_max))
            burn_divergent += int(div)
            if i == cfg.burn_in - 1 and burn_divergent > 0.9 * cfg.burn_in:
                raise NumericalError(
                    f"{burn_divergent}/{cfg.burn_in} divergent trajectories "
                    "during burn-in; the step size cannot stabilize"
                )
        else:
            accepted_post += int(acc)
            post_divergent += int(div)
            t = i - cfg.burn_in
            if (t + 1) % cfg.thin == 0:
                positions[kept] = to_state(z) if to_state is not None else np.asarray(z)
                kept += 1

    return PosteriorEnsemble(
        positions=positions,
        config=cfg,
        accept_rate=accepted_post / (cfg.retained * cfg.thin),
        layout=layout,
        divergences=post_divergent,
        step_size_final=math.exp(log_eps),
    )


# ----------------------------------------------------------------------------
# chain diagnostics
# ----------------------------------------------------------------------------


def autocorrelation(chain, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation for lags 0..max_lag (lag 0 is exactly 1)."""
    x = np.asarray(chain, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("chain must be one-dimensional")
    if x.size <= max_lag:
        raise ValueError("chain must be longer than max_lag")
    # constant chain: no correlation structure to normalize (checked before
    # centering, which can leave last-ulp residue around a non-dyadic mean)
    if np.all(x == x[0]):
        return np.concatenate([[1.0], np.zeros(max_lag)])
    x = x - x.mean()
    nfft = 1 << (2 * x.size - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / acov[0]


def effective_sample_size(chain, return_degenerate: bool = False):
    """ESS from the initial positive sequence of paired autocorrelations.

    A constant chain has no information to estimate correlation from; it
    reports an ESS of 0 and, with `return_degenerate`, a True flag.
    """
    x = np.asarray(chain, dtype=np.float64)
    if x.size < 10:
        raise ValueError("need at least 10 draws to estimate ESS")
    if np.all(x == x[0]):
        return (0.0, True) if return_degenerate else 0.0
    rho = autocorrelation(x, x.size - 1)
    tau = -1.0
    for m in range(x.size // 2):
        pair = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < x.size else 0.0)
        if pair <= 0:
            break
        tau += 2.0 * pair
    ess = x.size / max(tau, 1e-12)
    return (ess, False) if return_degenerate else ess


def potential_scale_reduction(chains) -> float:
    """Split R-hat over an (n_chains, n_draws) array; 1.0 means mixed."""
    a = np.asarray(chains, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 4:
        raise ValueError("need >= 2 chains with >= 4 draws each")
    half = a.shape[1] // 2
    split = np.concatenate([a[:, :half], a[:, half : 2 * half]], axis=0)
    n = split.shape[1]
    within = split.var(axis=1, ddof=1).mean()
    between = n * split.mean(axis=1).var(ddof=1)
    if within == 0:
        return np.inf if between > 0 else 1.0
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def dump_trace_csv(ensemble: PosteriorEnsemble, path) -> None:
    """Write one row per retained draw; columns are the flattened coordinates."""
    if ensemble.layout is not None:
        lay = ensemble.layout
        names = (
            [f"u_virt_{j}" for j in range(lay.J)]
            + [f"du_virt_{j}" for j in range(lay.J)]
            + [f"du_obs_{j}" for j in range(lay.m)]
            + [f"g_virt_{j}" for j in range(lay.J)]
            + [f"dg_virt_{j}" for j in range(lay.J)]
            + ["log_theta_u_0", "log_theta_u_1", "log_theta_g_0", "log_theta_g_1"]
        )
    else:
        names = [f"z{j}" for j in range(ensemble.positions.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows(ensemble.positions.tolist())
