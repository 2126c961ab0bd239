"""Negative log pseudo-likelihoods for the EM, K2, LL, LT and S estimators.

All objectives drop the ``(N d / 2) log 2π`` constant unless
``constant_drop=False``. Failures that make the objective undefined at a
proposed parameter (indefinite covariance, failed flow inversion, non-finite
value) are raised as :class:`ObjectiveUndefined` so the optimizer can apply a
penalty instead of aborting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (ContractViolation, DegenerateCovariance, InversionFailure,
                     ObjectiveUndefined, SingularJacobian)
from .linalg import OmegaH, expm, gaussian_quad_form, ll_integrals, van_loan_blocks, van_loan_omega
from .models import ParameterVector, SplitModel
from .simulate import Trajectory

ESTIMATORS = ("EM", "K2", "LL", "LT", "S")


def _batched_gaussian_nll(residual, cov):
    """``Σ_k ½ (log det C_k + r_kᵀ C_k⁻¹ r_k)`` for stacked covariances."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ObjectiveUndefined("per-step covariance is not positive definite") from None
    y = np.linalg.solve(L, residual[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum()
    return 0.5 * logdet + 0.5 * np.sum(y * y)


@dataclass
class ObjectiveSpec:
    """A pseudo-likelihood bound to a model and a trajectory.

    Calling the spec with a flat parameter vector (or a
    :class:`ParameterVector`) returns the objective value.
    """

    estimator: str
    model: SplitModel
    data: Trajectory
    constant_drop: bool = True
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.estimator = self.estimator.upper()
        if self.estimator not in ESTIMATORS:
            raise ContractViolation(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if self.data.dim != self.model.dim:
            raise ContractViolation(
                f"trajectory dimension {self.data.dim} does not match model dimension {self.model.dim}")
        self.x_prev = self.data.states[:-1]
        self.x_next = self.data.states[1:]

    @property
    def n_params(self):
        return len(self.model.param_names)

    def theta(self, theta) -> ParameterVector:
        if isinstance(theta, ParameterVector):
            return theta
        return self.model.make_theta(theta)

    def __call__(self, theta):
        theta = self.theta(theta)
        fn = _DISPATCH[self.estimator]
        try:
            with np.errstate(all="ignore"):
                value = fn(self, theta)
        except (DegenerateCovariance, InversionFailure, SingularJacobian, np.linalg.LinAlgError) as exc:
            raise ObjectiveUndefined(str(exc)) from exc
        if not np.isfinite(value):
            raise ObjectiveUndefined(f"{self.estimator} objective is not finite")
        if not self.constant_drop:
            value += 0.5 * self.data.N * self.model.dim * np.log(2 * np.pi)
        return float(value)


def _omega(spec, theta):
    A = spec.model.A(theta.beta)
    return A, van_loan_omega(A, theta.sigma_matrix(), spec.data.h)


def nll_lt(spec: ObjectiveSpec, theta) -> float:
    """Lie-Trotter objective: one Ω_h shared by all transitions."""
    theta = spec.theta(theta)
    h, beta = spec.data.h, theta.beta
    A, om = _omega(spec, theta)
    E = expm(A * h)
    r = spec.x_next - spec.model.nonlinear_flow(spec.x_prev, h, beta) @ E.T
    return 0.5 * spec.data.N * om.log_det + 0.5 * np.sum(gaussian_quad_form(r, om))


def strang_residuals(spec: ObjectiveSpec, theta):
    """``Z_k = f_{h/2}⁻¹(X_k) - e^{Ah} f_{h/2}(X_{k-1})`` and the pulled-back states."""
    theta = spec.theta(theta)
    h, beta = spec.data.h, theta.beta
    E = expm(spec.model.A(beta) * h)
    back = spec.model.inverse_nonlinear_flow(spec.x_next, h / 2, beta)
    Z = back - spec.model.nonlinear_flow(spec.x_prev, h / 2, beta) @ E.T
    return Z, back


def nll_s(spec: ObjectiveSpec, theta) -> float:
    """Strang objective with the change-of-variables Jacobian term.

    ``-Σ log|det D f_{h/2}⁻¹(X_k)|`` is evaluated as
    ``+Σ log|det D f_{h/2}(f_{h/2}⁻¹(X_k))|``, which is exact for any model.
    """
    theta = spec.theta(theta)
    h, beta = spec.data.h, theta.beta
    _, om = _omega(spec, theta)
    Z, back = strang_residuals(spec, theta)
    jac = np.sum(spec.model.log_det_jacobian_flow(back, h / 2, beta))
    return 0.5 * spec.data.N * om.log_det + 0.5 * np.sum(gaussian_quad_form(Z, om)) + jac


def nll_em(spec: ObjectiveSpec, theta) -> float:
    """Euler-Maruyama objective: mean ``x + hF(x)``, covariance ``hΣΣᵀ``."""
    theta = spec.theta(theta)
    h = spec.data.h
    om = OmegaH.factor(h * theta.sigma_matrix())
    r = spec.x_next - spec.x_prev - h * spec.model.F(spec.x_prev, theta.beta)
    return 0.5 * spec.data.N * om.log_det + 0.5 * np.sum(gaussian_quad_form(r, om))


def _drift_terms(spec, beta):
    """Per-step ``F``, ``DF`` and Hessians, cached on the last drift parameter."""
    key = ("drift", beta.tobytes())
    hit = spec._cache.get("drift")
    if hit is not None and hit[0] == key:
        return hit[1]
    m = spec.model
    val = (m.F(spec.x_prev, beta), m.jacobian_F(spec.x_prev, beta), m.hessians_F(spec.x_prev, beta))
    spec._cache["drift"] = (key, val)
    return val


def second_order_trace(S, H):
    """``[tr(ΣΣᵀ H_{F^(i)})]_i`` for stacked Hessians ``H[..., i, j, k]``."""
    return np.einsum("jk,...ijk->...i", S, H)


def nll_k2(spec: ObjectiveSpec, theta) -> float:
    """Kessler order-2 objective with per-step mean and covariance."""
    theta = spec.theta(theta)
    h = spec.data.h
    S = theta.sigma_matrix()
    F, J, H = _drift_terms(spec, theta.beta)
    JF = np.einsum("nij,nj->ni", J, F)
    mean = spec.x_prev + h * F + 0.5 * h * h * (JF + 0.5 * second_order_trace(S, H))
    JS = J @ S
    cov = h * S + 0.5 * h * h * (JS + np.swapaxes(JS, -1, -2))
    return _batched_gaussian_nll(spec.x_next - mean, cov)


def _ll_integrals_cached(spec, beta, J):
    key = beta.tobytes()
    hit = spec._cache.get("ll")
    if hit is not None and hit[0] == key:
        return hit[1]
    val = ll_integrals(J, spec.data.h)
    spec._cache["ll"] = (key, val)
    return val


def ll_increment(spec: ObjectiveSpec, theta):
    """Local-linearization mean increment ``R0 F + (h R0 - R1) M`` per step."""
    theta = spec.theta(theta)
    h = spec.data.h
    F, J, H = _drift_terms(spec, theta.beta)
    R0, R1 = _ll_integrals_cached(spec, theta.beta, J)
    M = 0.5 * second_order_trace(theta.sigma_matrix(), H)
    return (np.einsum("nij,nj->ni", R0, F)
            + np.einsum("nij,nj->ni", h * R0 - R1, M)), J


def nll_ll(spec: ObjectiveSpec, theta) -> float:
    """Ozaki local-linearization objective (Van Loan covariance per step)."""
    theta = spec.theta(theta)
    phi, J = ll_increment(spec, theta)
    cov = van_loan_blocks(J, theta.sigma_matrix(), spec.data.h)
    return _batched_gaussian_nll(spec.x_next - spec.x_prev - phi, cov)


_DISPATCH = {"EM": nll_em, "K2": nll_k2, "LL": nll_ll, "LT": nll_lt, "S": nll_s}


def make_objective(estimator: str, model: SplitModel, data: Trajectory, constant_drop=True) -> ObjectiveSpec:
    return ObjectiveSpec(estimator, model, data, constant_drop)
