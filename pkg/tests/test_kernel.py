"""Kernel oracles: derivative cross-covariances must match finite differences
of the base SE kernel, which is the ground truth the analytic formulas serve.

Sampling note: separations are kept within ~3 lengthscales and away from the
zero crossing of the mixed second derivative (at |x-x2| = rho), because beyond
that the kernel value sits below finite-difference resolution and a relative
comparison stops being meaningful.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from therm_elicit.kernel import (
    JITTER_SCHEDULE,
    JointCovariance,
    KernelParams,
    NumericalError,
    assemble_joint,
    cholesky_with_jitter,
    se_kernel,
    se_kernel_grad_x,
    se_kernel_grad_xx,
)

rng = np.random.default_rng(42)


def fd_grad_x(x, x2, p, h=1e-6):
    return (se_kernel(x + h, x2, p) - se_kernel(x - h, x2, p)) / (2 * h)


def fd_grad_xx(x, x2, p, h=1e-4):
    pp = se_kernel(x + h, x2 + h, p)
    pm = se_kernel(x + h, x2 - h, p)
    mp = se_kernel(x - h, x2 + h, p)
    mm = se_kernel(x - h, x2 - h, p)
    return (pp - pm - mp + mm) / (4 * h * h)


def random_cases(n, exclude_xx_zero_band=False):
    """(x, x2, params) with |x-x2| in [0.05, 3] lengthscales."""
    cases = []
    while len(cases) < n:
        nu = rng.uniform(0.1, 5.0)
        rho = rng.uniform(0.3, 4.0)
        sep = rng.uniform(0.05, 3.0)
        if exclude_xx_zero_band and abs(sep - 1.0) < 0.2:
            continue
        x = rng.uniform(18.0, 30.0)
        x2 = x - sep * rho * rng.choice([-1.0, 1.0])
        cases.append((x, x2, KernelParams(nu, rho)))
    return cases


class TestSeKernel:
    def test_zero_distance_returns_signal_variance(self):
        assert float(se_kernel(21.0, 21.0, KernelParams(2.0, 1.5))) == pytest.approx(2.0)

    def test_unit_case(self):
        assert float(se_kernel(0.0, 1.0, KernelParams(1.0, 1.0))) == pytest.approx(
            0.606530659712633, abs=1e-12
        )

    def test_far_apart(self):
        got = float(se_kernel(20.0, 28.0, KernelParams(1.0, 1.0)))
        assert got == pytest.approx(np.exp(-32.0), rel=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            se_kernel(np.nan, 21.0, KernelParams(1.0, 1.0))

    @given(
        x=st.floats(18, 30),
        x2=st.floats(18, 30),
        nu=st.floats(0.1, 5),
        rho=st.floats(0.3, 4),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_bounded(self, x, x2, nu, rho):
        p = KernelParams(nu, rho)
        k = float(se_kernel(x, x2, p))
        assert k == pytest.approx(float(se_kernel(x2, x, p)), rel=1e-12)
        assert k <= float(se_kernel(x, x, p)) + 1e-15

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            KernelParams(-1.0, 1.0)
        with pytest.raises(ValueError):
            KernelParams(1.0, 0.0)


class TestDerivativeKernels:
    def test_grad_x_zero_at_coincident_points(self):
        assert float(se_kernel_grad_x(23.0, 23.0, KernelParams(2.0, 0.7))) == 0.0

    def test_grad_x_sign_and_value(self):
        p = KernelParams(1.0, 1.0)
        assert float(se_kernel_grad_x(1.0, 0.0, p)) == pytest.approx(
            -np.exp(-0.5), abs=1e-12
        )
        assert float(se_kernel_grad_x(0.0, 1.0, p)) == pytest.approx(
            np.exp(-0.5), abs=1e-12
        )

    def test_grad_xx_at_zero_distance(self):
        p = KernelParams(2.0, 0.5)
        assert float(se_kernel_grad_xx(24.0, 24.0, p)) == pytest.approx(2.0 / 0.25)

    def test_grad_xx_zero_crossing_at_one_lengthscale(self):
        assert float(se_kernel_grad_xx(0.0, 1.0, KernelParams(1.0, 1.0))) == pytest.approx(
            0.0, abs=1e-15
        )

    def test_grad_xx_beyond_crossing_is_negative(self):
        got = float(se_kernel_grad_xx(0.0, 3.0, KernelParams(1.0, 1.0)))
        assert got == pytest.approx(-8.0 * np.exp(-4.5), rel=1e-12)

    def test_grad_x_matches_finite_differences_1000(self):
        for x, x2, p in random_cases(1000):
            an = float(se_kernel_grad_x(x, x2, p))
            fd = float(fd_grad_x(x, x2, p))
            assert abs(fd - an) / max(abs(an), abs(fd)) < 1e-5

    def test_grad_xx_matches_finite_differences_1000(self):
        for x, x2, p in random_cases(1000, exclude_xx_zero_band=True):
            an = float(se_kernel_grad_xx(x, x2, p))
            fd = float(fd_grad_xx(x, x2, p))
            assert abs(fd - an) / max(abs(an), abs(fd)) < 1e-4


class TestAssembleJoint:
    def test_single_value_point(self):
        jc = assemble_joint([21.0], [], KernelParams(2.0, 1.0))
        np.testing.assert_allclose(jc.matrix, [[2.0]])

    def test_value_and_deriv_at_same_point(self):
        jc = assemble_joint([21.0], [21.0], KernelParams(1.0, 1.0))
        np.testing.assert_allclose(jc.matrix, np.eye(2), atol=1e-15)

    def test_empty_union_rejected(self):
        with pytest.raises(ValueError):
            assemble_joint([], [], KernelParams(1.0, 1.0))

    def test_virtual_grid_psd_before_jitter(self):
        grid = np.arange(20.0, 28.01, 0.5)
        jc = assemble_joint(grid, grid, KernelParams(1.0, 1.0))
        assert jc.matrix.shape == (34, 34)
        np.testing.assert_allclose(jc.matrix, jc.matrix.T, atol=1e-14)
        assert np.linalg.eigvalsh(jc.matrix).min() >= -1e-8
        cholesky_with_jitter(jc)

    def test_exchange_symmetry(self):
        p = KernelParams(1.3, 0.9)
        vals = [20.0, 22.5, 26.0]
        ders = [21.0, 27.0]
        perm_v = [2, 0, 1]
        perm_d = [1, 0]
        base = assemble_joint(vals, ders, p).matrix
        permuted = assemble_joint(
            [vals[i] for i in perm_v], [ders[i] for i in perm_d], p
        ).matrix
        idx = perm_v + [len(vals) + i for i in perm_d]
        np.testing.assert_allclose(permuted, base[np.ix_(idx, idx)], atol=1e-14)

    def test_cross_block_matches_scalar_kernels(self):
        p = KernelParams(0.8, 1.7)
        jc = assemble_joint([20.0, 24.0], [25.5], p)
        # cov(u(24.0), u'(25.5)) sits at [1, 2]
        assert jc.matrix[1, 2] == pytest.approx(
            float(se_kernel_grad_x(25.5, 24.0, p)), abs=1e-14
        )


class TestCholeskyWithJitter:
    def test_identity_passes_through(self):
        L = cholesky_with_jitter(np.eye(3))
        np.testing.assert_allclose(L, np.eye(3))

    def test_rank_deficient_succeeds_with_small_jitter(self):
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = cholesky_with_jitter(m)
        # reconstruction differs from m only by the jitter actually used
        np.testing.assert_allclose(L @ L.T, m, atol=2e-6)
        assert np.abs(L @ L.T - m).max() <= 1e-6 + 1e-12

    def test_nan_raises_numerical_error(self):
        m = np.eye(2)
        m[0, 1] = np.nan
        with pytest.raises(NumericalError):
            cholesky_with_jitter(m)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky_with_jitter(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_hopeless_matrix_raises_with_max_jitter_in_message(self):
        m = -np.eye(3)
        with pytest.raises(NumericalError, match="0.0001"):
            cholesky_with_jitter(m)

    def test_stacked_input(self):
        stack = np.stack([np.eye(2), 4.0 * np.eye(2)])
        L = cholesky_with_jitter(stack)
        np.testing.assert_allclose(L[1], 2.0 * np.eye(2))

    def test_accepts_joint_covariance(self):
        jc = assemble_joint([21.0, 22.0], [], KernelParams(1.0, 1.0))
        L = cholesky_with_jitter(jc)
        np.testing.assert_allclose(L @ L.T, jc.matrix, atol=1e-7)

    def test_schedule_shape(self):
        assert JITTER_SCHEDULE[0] == 0.0
        assert JITTER_SCHEDULE[1] == 1e-8
        assert JITTER_SCHEDULE[-1] == 1e-4
