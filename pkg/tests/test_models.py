from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from splitsde import (ContractViolation, LorenzModel, OUModel, ParameterVector, SplitModel,
                      UnsupportedOperation, available_models, drift_eval, get_model,
                      inverse_nonlinear_flow, log_det_jacobian_flow, nonlinear_flow, register_model)
from splitsde.models import vech_indices

BETA = np.array([10.0, 28.0, 8.0 / 3.0])
coord = st.floats(-30, 30)
state = st.tuples(coord, coord, st.floats(-10, 60)).map(np.array)


def ode_flow(model, x, h, beta):
    sol = solve_ivp(lambda t, y: model.N(y, beta), (0.0, h), x, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def fd_jacobian(fun, x, eps=1e-6):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = eps
        cols.append((fun(x + e) - fun(x - e)) / (2 * eps))
    return np.stack(cols, axis=-1)


class CubicModel(SplitModel):
    """A two-dimensional model without closed-form flow, to exercise the fallbacks."""

    name = "cubic"
    dim = 2
    param_names = ("a", "b", "s1", "s2")

    def A(self, beta):
        return np.array([[-beta[0], 1.0], [-1.0, -beta[1]]])

    def N(self, x, beta):
        return np.stack([-x[..., 0] ** 3, np.sin(x[..., 0])], axis=-1)


class TestParameterVector:
    def test_flat_round_trip(self):
        pv = ParameterVector([1.0, 2.0], [3.0, 4.0])
        back = ParameterVector.from_flat(pv.flat, 2)
        assert np.array_equal(back.beta, pv.beta) and np.array_equal(back.sigma_param, pv.sigma_param)

    def test_diagonal_matrix(self):
        assert np.array_equal(ParameterVector([1.0], [2.0, 3.0]).sigma_matrix(), np.diag([2.0, 3.0]))

    def test_vech_order(self):
        i, j = vech_indices(3)
        assert list(zip(i, j)) == [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)]

    def test_full_mode(self):
        pv = ParameterVector([0.0], [1.0, 0.5, 2.0], mode="full")
        assert pv.dim == 2
        assert np.array_equal(pv.sigma_matrix(), np.array([[1.0, 0.5], [0.5, 2.0]]))

    def test_bad_vech_length(self):
        with pytest.raises(ContractViolation):
            ParameterVector([0.0], [1.0, 2.0], mode="full")

    def test_non_finite(self):
        with pytest.raises(ContractViolation):
            ParameterVector([np.nan], [1.0])

    def test_indefinite_detected(self):
        with pytest.raises(ContractViolation):
            ParameterVector([0.0], [1.0, 2.0, 1.0], mode="full").check_positive_definite()


class TestLorenz:
    def test_drift_is_split_sum(self, lorenz):
        x = np.array([1.0, -2.0, 20.0])
        A = lorenz.A(BETA)
        np.testing.assert_allclose(lorenz.F(x, BETA), A @ x + lorenz.N(x, BETA), rtol=1e-15)
        np.testing.assert_allclose(lorenz.F(x, BETA), [-30.0, 28 - (-2) - 20, -2 - 160 / 3], rtol=1e-14)

    def test_default_theta(self, lorenz):
        assert np.allclose(lorenz.default_theta.flat, [10, 28, 8 / 3, 1, 2, 1.5])

    @settings(max_examples=40, deadline=None)
    @given(state, st.sampled_from([0.001, 0.005, 0.01, 0.05]))
    def test_flow_matches_ode_solver(self, x, h):
        lorenz = LorenzModel()
        np.testing.assert_allclose(lorenz.nonlinear_flow(x, h, BETA), ode_flow(lorenz, x, h, BETA),
                                   atol=1e-9 * (1 + np.abs(x).max()), rtol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(state, st.floats(1e-4, 0.1))
    def test_inverse_round_trip(self, x, h):
        lorenz = LorenzModel()
        y = lorenz.inverse_nonlinear_flow(lorenz.nonlinear_flow(x, h, BETA), h, BETA)
        np.testing.assert_allclose(y, x, atol=1e-10 * (1 + np.abs(x).max()))
        z = lorenz.nonlinear_flow(lorenz.inverse_nonlinear_flow(x, h, BETA), h, BETA)
        np.testing.assert_allclose(z, x, atol=1e-10 * (1 + np.abs(x).max()))

    def test_flow_group_property(self, lorenz):
        x = np.array([3.0, -1.0, 25.0])
        two = lorenz.nonlinear_flow(lorenz.nonlinear_flow(x, 0.01, BETA), 0.02, BETA)
        np.testing.assert_allclose(two, lorenz.nonlinear_flow(x, 0.03, BETA), atol=1e-12)

    def test_log_det_value(self, lorenz):
        # the x-coordinate decays by e^{-ph/2}; the (y, z) rotation keeps volume
        val = lorenz.log_det_jacobian_flow(np.array([1.0, 2.0, 3.0]), 0.01, BETA)
        assert val == pytest.approx(-0.05, abs=1e-15)
        assert lorenz.log_det_jacobian_inverse_flow(np.zeros(3), 0.01, BETA) == pytest.approx(0.05)

    def test_log_det_matches_fd(self, lorenz):
        rng = np.random.default_rng(0)
        for x in rng.normal(0, 10, (10, 3)):
            J = fd_jacobian(lambda y: lorenz.nonlinear_flow(y, 0.02, BETA), x)
            assert lorenz.log_det_jacobian_flow(x, 0.02, BETA) == pytest.approx(
                np.log(abs(np.linalg.det(J))), abs=1e-7)

    def test_flow_jacobian_matches_fd(self, lorenz):
        rng = np.random.default_rng(1)
        for x in rng.normal(0, 10, (10, 3)):
            J = fd_jacobian(lambda y: lorenz.nonlinear_flow(y, 0.03, BETA), x)
            np.testing.assert_allclose(lorenz.flow_jacobian(x, 0.03, BETA), J, atol=1e-7)

    def test_drift_jacobian_and_hessian_match_fd(self, lorenz):
        rng = np.random.default_rng(2)
        for x in rng.normal(0, 10, (5, 3)):
            J = fd_jacobian(lambda y: lorenz.F(y, BETA), x)
            np.testing.assert_allclose(lorenz.jacobian_F(x, BETA), J, atol=1e-6)
            H = fd_jacobian(lambda y: lorenz.jacobian_F(y, BETA), x)
            np.testing.assert_allclose(lorenz.hessians_F(x, BETA), H, atol=1e-6)

    def test_beta_jacobian_matches_fd(self, lorenz):
        x = np.array([1.5, -3.0, 22.0])
        G = fd_jacobian(lambda b: lorenz.F(x, b), BETA.copy())
        np.testing.assert_allclose(lorenz.drift_beta_jacobian(x, BETA), G, atol=1e-6)

    def test_batched_shapes(self, lorenz):
        x = np.random.default_rng(3).normal(size=(4, 5, 3))
        assert lorenz.nonlinear_flow(x, 0.01, BETA).shape == (4, 5, 3)
        assert lorenz.log_det_jacobian_flow(x, 0.01, BETA).shape == (4, 5)
        assert lorenz.hessians_F(x, BETA).shape == (4, 5, 3, 3, 3)

    def test_wrong_state_dimension(self, lorenz):
        with pytest.raises(ContractViolation):
            lorenz.nonlinear_flow(np.zeros(2), 0.01, BETA)

    def test_wrong_beta_length(self, lorenz):
        with pytest.raises(ContractViolation):
            lorenz.F(np.zeros(3), np.ones(2))

    def test_trigpoly_flow_agrees(self, lorenz):
        comps = lorenz.flow_trigpoly(0.02, BETA)
        x = np.array([2.0, -1.0, 30.0])
        np.testing.assert_allclose([c(x) for c in comps], lorenz.nonlinear_flow(x, 0.02, BETA),
                                   atol=1e-13)


class TestOU:
    def test_linear_part_only(self, ou):
        x = np.array([0.7])
        assert np.array_equal(ou.nonlinear_flow(x, 0.3, [1.0]), x)
        assert ou.log_det_jacobian_flow(x, 0.3, [1.0]) == 0.0
        assert ou.F(x, [2.0]) == pytest.approx(-1.4)

    def test_multidimensional_names(self):
        m = OUModel(dim=3)
        assert m.param_names == ("a", "sigma1_sq", "sigma2_sq", "sigma3_sq")
        assert m.make_theta([1, 2, 3, 4]).sigma_matrix().shape == (3, 3)

    def test_bad_dimension(self):
        with pytest.raises(ContractViolation):
            OUModel(dim=0)


class TestFallbacks:
    beta = np.array([0.5, 1.0])

    def test_rk4_flow_matches_ode_solver(self):
        m = CubicModel()
        x = np.array([1.2, -0.4])
        np.testing.assert_allclose(m.nonlinear_flow(x, 0.05, self.beta), ode_flow(m, x, 0.05, self.beta),
                                   atol=1e-8)

    def test_newton_inverse(self):
        m = CubicModel()
        x = np.array([[1.2, -0.4], [-2.0, 3.0]])
        y = m.inverse_nonlinear_flow(x, 0.05, self.beta)
        np.testing.assert_allclose(m.nonlinear_flow(y, 0.05, self.beta), x, atol=1e-9)

    def test_log_det_relation(self):
        m = CubicModel()
        x = np.array([0.8, 0.1])
        fwd = m.log_det_jacobian_flow(m.inverse_nonlinear_flow(x, 0.05, self.beta), 0.05, self.beta)
        assert m.log_det_jacobian_inverse_flow(x, 0.05, self.beta) == pytest.approx(-fwd)
        # d/dt log det = div N = -3 x² along the path; small-h check against that
        assert m.log_det_jacobian_flow(x, 1e-3, self.beta) == pytest.approx(-3 * 0.64 * 1e-3, rel=1e-2)

    def test_fallback_disabled(self):
        class Strict(CubicModel):
            numeric_fallback = False

        with pytest.raises(UnsupportedOperation):
            Strict().nonlinear_flow(np.zeros(2), 0.1, self.beta)

    def test_fd_drift_derivatives(self):
        m = CubicModel()
        x = np.array([0.3, 0.2])
        J = m.jacobian_F(x, self.beta)
        np.testing.assert_allclose(J, [[-0.5 - 3 * 0.09, 1.0], [-1.0 + np.cos(0.3), -1.0]], atol=1e-8)
        H = m.hessians_F(x, self.beta)
        assert H[0, 0, 0] == pytest.approx(-6 * 0.3, abs=1e-4)
        assert H[1, 0, 0] == pytest.approx(-np.sin(0.3), abs=1e-4)


class TestRegistry:
    def test_builtin(self):
        assert {"lorenz", "ou"} <= set(available_models())
        assert isinstance(get_model("lorenz"), LorenzModel)
        assert get_model("ou", dim=2).dim == 2

    def test_unknown(self):
        with pytest.raises(ContractViolation):
            get_model("nope")

    def test_register_and_duplicate(self):
        register_model("cubic-test", CubicModel, overwrite=True)
        assert isinstance(get_model("cubic-test"), CubicModel)
        with pytest.raises(ContractViolation):
            register_model("cubic-test", CubicModel)

    def test_operation_aliases(self, lorenz):
        x = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(drift_eval(lorenz, x, BETA), lorenz.F(x, BETA))
        y = nonlinear_flow(lorenz, x, 0.01, BETA)
        np.testing.assert_allclose(inverse_nonlinear_flow(lorenz, y, 0.01, BETA), x, atol=1e-13)
        assert log_det_jacobian_flow(lorenz, x, 0.01, BETA) == pytest.approx(-0.05)
