"""Squared-exponential covariance and its derivative cross-covariances.

A zero-mean GP over utility u(x) with

    k(x, x') = nu * exp(-(x - x')^2 / (2 rho^2))

also determines the covariances involving the derivative process u'(x):

    cov(u'(x), u(x'))  = dk/dx      = -k(x, x') (x - x') / rho^2
    cov(u'(x), u'(x')) = d2k/dxdx'  =  k(x, x') (1 - (x - x')^2 / rho^2) / rho^2

so a joint Gaussian over function values at `value_points` and derivatives at
`deriv_points` has the block covariance assembled by `assemble_joint`.

All math helpers are written against `jax.numpy` so the model's log-posterior
can trace through them; they accept plain floats/ndarrays as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import jax.numpy as jnp
import numpy as np


class NumericalError(RuntimeError):
    """Factorization or sampling failed beyond the configured safeguards."""


@dataclass(frozen=True)
class KernelParams:
    """SE kernel hyperparameters: signal variance nu > 0, lengthscale rho > 0 (degC)."""

    signal_variance: float
    lengthscale: float

    def __post_init__(self):
        if not (self.signal_variance > 0 and self.lengthscale > 0):
            raise ValueError(
                f"kernel params must be positive, got nu={self.signal_variance} "
                f"rho={self.lengthscale}"
            )


@dataclass(frozen=True)
class JointCovariance:
    """Covariance over (values at value_points, derivatives at deriv_points)."""

    matrix: np.ndarray
    value_points: tuple
    deriv_points: tuple


# Traced-safe math on raw (nu, rho); the public ops below validate and wrap.


def se(x, x2, nu, rho):
    d = (jnp.asarray(x) - jnp.asarray(x2)) / rho
    return nu * jnp.exp(-0.5 * d * d)


def se_grad_x(x, x2, nu, rho):
    # cov(u'(x), u(x2)) = dk/dx
    return -se(x, x2, nu, rho) * (jnp.asarray(x) - jnp.asarray(x2)) / rho**2


def se_grad_xx(x, x2, nu, rho):
    # cov(u'(x), u'(x2)) = d2k/dx dx2
    d = (jnp.asarray(x) - jnp.asarray(x2)) / rho
    return se(x, x2, nu, rho) * (1.0 - d * d) / rho**2


def joint_matrix(value_points, deriv_points, nu, rho):
    """Block covariance of [u(values); u'(derivs)], traced-safe.

    Blocks: K_vv[i,j] = k(v_i, v_j); K_vd[i,j] = cov(u(v_i), u'(d_j)),
    obtained as cov(u'(d_j), u(v_i)); K_dd[i,j] = cov(u'(d_i), u'(d_j)).
    """
    v = jnp.asarray(value_points, dtype=jnp.float64)
    d = jnp.asarray(deriv_points, dtype=jnp.float64)
    kvv = se(v[:, None], v[None, :], nu, rho)
    kdd = se_grad_xx(d[:, None], d[None, :], nu, rho)
    kdv = se_grad_x(d[:, None], v[None, :], nu, rho)
    if v.size == 0:
        return kdd
    if d.size == 0:
        return kvv
    return jnp.block([[kvv, kdv.T], [kdv, kdd]])


def _check_finite_scalars(**named):
    for name, val in named.items():
        if not np.all(np.isfinite(val)):
            raise ValueError(f"non-finite input {name}={val}")


def se_kernel(x, x2, p: KernelParams):
    """k(x, x'); symmetric, maximal (= signal variance) at zero distance."""
    _check_finite_scalars(x=x, x2=x2)
    return se(x, x2, p.signal_variance, p.lengthscale)


def se_kernel_grad_x(x, x2, p: KernelParams):
    """cov(u'(x), u(x2)); odd in (x - x2), zero at coincident points."""
    _check_finite_scalars(x=x, x2=x2)
    return se_grad_x(x, x2, p.signal_variance, p.lengthscale)


def se_kernel_grad_xx(x, x2, p: KernelParams):
    """cov(u'(x), u'(x2)); equals nu/rho^2 at coincident points."""
    _check_finite_scalars(x=x, x2=x2)
    return se_grad_xx(x, x2, p.signal_variance, p.lengthscale)


def assemble_joint(
    value_points: Sequence[float], deriv_points: Sequence[float], p: KernelParams
) -> JointCovariance:
    """Joint covariance over values and derivatives; symmetric by construction."""
    value_points = tuple(float(x) for x in value_points)
    deriv_points = tuple(float(x) for x in deriv_points)
    if not value_points and not deriv_points:
        raise ValueError("assemble_joint needs at least one point")
    _check_finite_scalars(value_points=value_points, deriv_points=deriv_points)
    m = joint_matrix(value_points, deriv_points, p.signal_variance, p.lengthscale)
    return JointCovariance(np.asarray(m), value_points, deriv_points)


JITTER_SCHEDULE = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def cholesky_with_jitter(c) -> np.ndarray:
    """Lower Cholesky factor of matrix + jitter*I, escalating jitter on failure.

    Accepts a JointCovariance or a (stacked) symmetric ndarray; the jitter that
    first succeeds applies to the whole stack. Raises NumericalError when even
    the largest jitter fails or the input contains NaN.
    """
    m = np.asarray(c.matrix if isinstance(c, JointCovariance) else c, dtype=np.float64)
    if np.isnan(m).any():
        raise NumericalError("covariance contains NaN")
    if not np.allclose(m, np.swapaxes(m, -1, -2), rtol=1e-12, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    eye = np.eye(m.shape[-1])
    for jitter in JITTER_SCHEDULE:
        try:
            return np.linalg.cholesky(m + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Cholesky failed at max jitter {JITTER_SCHEDULE[-1]:g}"
    )
