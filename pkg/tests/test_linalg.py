from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splitsde import ContractViolation, DegenerateCovariance, OmegaH
from splitsde.linalg import expm, gaussian_quad_form, ll_integrals, van_loan_blocks, van_loan_omega


def taylor_expm(M, terms=30):
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def trapezoid(fun, h, nodes=10_000):
    u = np.linspace(0.0, h, nodes + 1)
    vals = np.stack([fun(t) for t in u])
    w = np.full(nodes + 1, h / nodes)
    w[0] = w[-1] = h / nodes / 2
    return np.tensordot(w, vals, axes=1)


def gauss_legendre(fun, h, nodes=40):
    z, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * h * (z + 1)
    return 0.5 * h * np.tensordot(w, np.stack([fun(t) for t in u]), axes=1)


LORENZ_A = np.array([[-5.0, 10.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -8.0 / 3.0]])


class TestExpm:
    def test_zero_gives_identity(self):
        assert np.array_equal(expm(np.zeros((4, 4))), np.eye(4))

    def test_diagonal(self):
        np.testing.assert_allclose(expm(np.diag([1.0, 2.0])), np.diag([np.e, np.e ** 2]), rtol=1e-14)

    def test_matches_taylor_series(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            M = rng.standard_normal((3, 3))
            np.testing.assert_allclose(expm(M), taylor_expm(M), atol=1e-9, rtol=0)

    def test_large_norm_agrees_with_scipy(self):
        rng = np.random.default_rng(1)
        for scale in (5.0, 20.0, 60.0):
            M = scale * rng.standard_normal((5, 5)) / np.sqrt(5)
            ref = scipy.linalg.expm(M)
            np.testing.assert_allclose(expm(M), ref, rtol=1e-10 * max(1, np.linalg.cond(ref)),
                                       atol=1e-12 * np.abs(ref).max())

    def test_batch_equals_loop(self):
        rng = np.random.default_rng(2)
        Ms = rng.standard_normal((7, 4, 4)) * np.array([0.001, 0.1, 1, 3, 8, 0.5, 12])[:, None, None]
        batch = expm(Ms)
        for M, E in zip(Ms, batch):
            np.testing.assert_allclose(E, expm(M), rtol=1e-12, atol=1e-14 * np.abs(E).max())

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=st.floats(-10 / 3, 10 / 3)))
    def test_inverse_identity(self, M):
        # ‖M‖_F <= 10 by construction of the element range
        prod = expm(M) @ expm(-M)
        assert np.linalg.norm(prod - np.eye(3)) <= 1e-10 * max(1.0, np.linalg.norm(expm(M)) *
                                                               np.linalg.norm(expm(-M)) / 1e3)

    def test_rejects_non_finite(self):
        with pytest.raises(ContractViolation):
            expm(np.array([[np.nan, 0], [0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ContractViolation):
            expm(np.ones((2, 3)))


class TestVanLoan:
    def test_zero_drift(self):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(van_loan_omega(np.zeros((2, 2)), S, 0.7).matrix, 0.7 * S, rtol=1e-14)

    def test_scalar_ou(self):
        om = van_loan_omega(np.array([[-1.0]]), np.array([[2.0]]), 0.5)
        assert om.matrix[0, 0] == pytest.approx(1 - np.exp(-1.0), abs=1e-14)
        assert om.matrix[0, 0] == pytest.approx(0.632121, abs=5e-7)

    def test_lorenz_quadrature(self):
        S = np.diag([1.0, 2.0, 1.5])
        h = 0.01
        ref = trapezoid(lambda u: scipy.linalg.expm(LORENZ_A * (h - u)) @ S
                        @ scipy.linalg.expm(LORENZ_A.T * (h - u)), h)
        np.testing.assert_allclose(van_loan_omega(LORENZ_A, S, h).matrix, ref, atol=1e-9, rtol=0)

    def test_random_triples_quadrature(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            A = rng.standard_normal((3, 3)) * 2
            B = rng.standard_normal((3, 3))
            S = B @ B.T + 0.1 * np.eye(3)
            h = rng.uniform(0.001, 0.5)
            ref = gauss_legendre(lambda u: scipy.linalg.expm(A * (h - u)) @ S
                                 @ scipy.linalg.expm(A.T * (h - u)), h)
            np.testing.assert_allclose(van_loan_omega(A, S, h).matrix, ref, atol=1e-9, rtol=1e-9)

    def test_second_order_expansion_slope(self):
        S = np.diag([1.0, 2.0, 1.5])
        hs = np.logspace(-1, -3, 7)
        res = [np.linalg.norm(van_loan_omega(LORENZ_A, S, h).matrix
                              - (h * S + h * h / 2 * (LORENZ_A @ S + S @ LORENZ_A.T))) for h in hs]
        slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
        assert slope >= 2.7

    def test_symmetric_positive_definite(self):
        om = van_loan_omega(LORENZ_A, np.diag([1.0, 2.0, 1.5]), 0.05)
        assert np.array_equal(om.matrix, om.matrix.T)
        assert np.all(np.linalg.eigvalsh(om.matrix) > 0)
        assert om.log_det == pytest.approx(2 * np.sum(np.log(np.diag(om.chol))), abs=1e-12)
        assert om.log_det == pytest.approx(np.linalg.slogdet(om.matrix)[1], abs=1e-10)

    def test_batched_blocks(self):
        rng = np.random.default_rng(4)
        As = rng.standard_normal((5, 3, 3))
        S = np.diag([1.0, 2.0, 1.5])
        batch = van_loan_blocks(As, S, 0.1)
        for A, om in zip(As, batch):
            np.testing.assert_allclose(om, van_loan_omega(A, S, 0.1).matrix, rtol=1e-13, atol=1e-15)

    def test_nonpositive_step(self):
        with pytest.raises(ContractViolation):
            van_loan_omega(LORENZ_A, np.eye(3), 0.0)

    def test_degenerate_reports_eigenvalue(self):
        S = np.diag([1.0, 0.0, -1.0])
        with pytest.raises(DegenerateCovariance) as info:
            van_loan_omega(np.zeros((3, 3)), S, 1.0)
        assert info.value.min_eigenvalue == pytest.approx(-1.0)


class TestLLIntegrals:
    def test_zero_jacobian(self):
        R0, R1 = ll_integrals(np.zeros((3, 3)), 0.2)
        np.testing.assert_allclose(R0, 0.2 * np.eye(3), rtol=1e-14)
        np.testing.assert_allclose(R1, 0.02 * np.eye(3), rtol=1e-13)

    def test_scalar_closed_form(self):
        a, h = 2.0, 0.1
        R0, R1 = ll_integrals(np.array([[a]]), h)
        assert R0[0, 0] == pytest.approx((np.exp(a * h) - 1) / a, rel=1e-13)
        assert R0[0, 0] == pytest.approx(0.110701, abs=5e-7)
        # ∫ u e^{au} du = e^{ah}(ah - 1)/a² + 1/a²
        assert R1[0, 0] == pytest.approx((np.exp(a * h) * (a * h - 1) + 1) / a ** 2, rel=1e-12)

    def test_random_quadrature(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            J = rng.standard_normal((3, 3)) * 3
            h = 0.05
            R0, R1 = ll_integrals(J, h)
            ref0 = gauss_legendre(lambda u: scipy.linalg.expm(J * u), h)
            ref1 = gauss_legendre(lambda u: scipy.linalg.expm(J * u) * u, h)
            np.testing.assert_allclose(R0, ref0, atol=1e-9, rtol=1e-9)
            np.testing.assert_allclose(R1, ref1, atol=1e-9, rtol=1e-9)

    def test_exact_identity(self):
        rng = np.random.default_rng(6)
        J = rng.standard_normal((8, 3, 3)) * 5
        R0, _ = ll_integrals(J, 0.07)
        np.testing.assert_allclose(J @ R0, expm(0.07 * J) - np.eye(3), atol=1e-12)

    def test_singular_jacobian_matches_quadrature(self):
        J = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -2.0]])
        R0, R1 = ll_integrals(J, 0.3)
        np.testing.assert_allclose(R0, gauss_legendre(lambda u: scipy.linalg.expm(J * u), 0.3), atol=1e-12)
        np.testing.assert_allclose(R1, gauss_legendre(lambda u: u * scipy.linalg.expm(J * u), 0.3),
                                   atol=1e-12)

    def test_nonpositive_step(self):
        with pytest.raises(ContractViolation):
            ll_integrals(np.eye(2), -0.1)


class TestQuadForm:
    def test_zero_residual(self):
        assert gaussian_quad_form(np.zeros(3), OmegaH.factor(np.eye(3))) == 0.0

    def test_identity(self):
        assert gaussian_quad_form(np.array([3.0, 4.0]), OmegaH.factor(np.eye(2))) == pytest.approx(25.0)

    def test_explicit_inverse(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            B = rng.standard_normal((3, 3))
            S = B @ B.T + 0.2 * np.eye(3)
            r = rng.standard_normal(3)
            ref = r @ np.linalg.inv(S) @ r
            assert gaussian_quad_form(r, OmegaH.factor(S)) == pytest.approx(ref, rel=1e-10)

    def test_stacked_residuals(self):
        rng = np.random.default_rng(8)
        S = np.diag([1.0, 4.0])
        r = rng.standard_normal((6, 2))
        np.testing.assert_allclose(gaussian_quad_form(r, OmegaH.factor(S)),
                                   r[:, 0] ** 2 + r[:, 1] ** 2 / 4, rtol=1e-14)
