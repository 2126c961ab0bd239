"""Split SDE models ``dX = A(β) X dt + N(X; β) dt + Σ dW``.

A model bundles the linear matrix ``A(β)``, the nonlinear remainder ``N``,
and the exact flow ``f_h`` of ``dX = N(X) dt`` with its inverse and Jacobian
log-determinant. Subclasses override whatever they know in closed form; the
base class falls back to a fixed-step RK4 flow, Newton inversion and
finite-difference derivatives.

All state arguments are arrays of shape ``(..., d)``; parameters are 1-D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractViolation, InversionFailure, SingularJacobian, UnsupportedOperation

SIGMA_MODES = ("diagonal", "full")


def vech_indices(d):
    """Row/column indices of the half-vectorization, column by column.

    Ordering is ``(11, 12, 22, 13, 23, 33, ...)``.
    """
    rows, cols = [], []
    for j in range(d):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def sigma_param_count(d, mode):
    if mode == "diagonal":
        return d
    if mode == "full":
        return d * (d + 1) // 2
    raise ContractViolation(f"unknown sigma mode {mode!r}")


@dataclass(frozen=True)
class ParameterVector:
    """Drift parameters ``beta`` plus a parameterization of ``ΣΣᵀ``.

    ``mode='diagonal'`` stores the diagonal of ``ΣΣᵀ``; ``mode='full'`` stores
    its half-vectorization (see :func:`vech_indices`).
    """

    beta: np.ndarray
    sigma_param: np.ndarray
    mode: str = "diagonal"

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "sigma_param", np.atleast_1d(np.asarray(self.sigma_param, dtype=float)))
        if self.mode not in SIGMA_MODES:
            raise ContractViolation(f"unknown sigma mode {self.mode!r}")
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.sigma_param))):
            raise ContractViolation("parameters must be finite")
        self.dim  # validates sigma_param length

    @property
    def dim(self):
        s = self.sigma_param.size
        if self.mode == "diagonal":
            return s
        d = int(round((np.sqrt(8 * s + 1) - 1) / 2))
        if d * (d + 1) // 2 != s:
            raise ContractViolation(f"{s} is not a valid half-vectorization length")
        return d

    def sigma_matrix(self):
        """Reconstruct ``ΣΣᵀ`` (not checked for definiteness)."""
        d = self.dim
        if self.mode == "diagonal":
            return np.diag(self.sigma_param)
        S = np.zeros((d, d))
        i, j = vech_indices(d)
        S[i, j] = self.sigma_param
        S[j, i] = self.sigma_param
        return S

    def check_positive_definite(self):
        try:
            np.linalg.cholesky(self.sigma_matrix())
        except np.linalg.LinAlgError:
            raise ContractViolation("ΣΣᵀ is not positive definite") from None
        return self

    @property
    def flat(self):
        return np.concatenate([self.beta, self.sigma_param])

    @classmethod
    def from_flat(cls, theta, r, mode="diagonal"):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:r], theta[r:], mode)


def _fd_jacobian(fun, x, rel_step=1e-6):
    """Central-difference Jacobian of a vectorized map ``(..., d) -> (..., m)``.

    Returns ``(..., m, d)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for j in range(d):
        step = rel_step * (1.0 + np.abs(x[..., j]))
        e = np.zeros_like(x)
        e[..., j] = step
        cols.append((fun(x + e) - fun(x - e)) / (2.0 * step)[..., None])
    return np.stack(cols, axis=-1)


class SplitModel:
    """Base class for split SDE models.

    Subclasses must set ``name``, ``dim``, ``param_names`` and implement
    :meth:`A` and :meth:`N`. Flow-related methods have numerical fallbacks
    that can be disabled with ``numeric_fallback = False``.
    """

    name = "model"
    dim = 1
    param_names: tuple = ()
    sigma_mode = "diagonal"
    numeric_fallback = True
    flow_substeps = 8
    newton_tol = 1e-10
    newton_max_iter = 50

    @property
    def drift_param_count(self):
        return len(self.param_names) - sigma_param_count(self.dim, self.sigma_mode)

    @property
    def default_theta(self) -> ParameterVector | None:
        return None

    @property
    def positive_mask(self):
        """Which entries of the flat parameter must be positive."""
        return np.ones(len(self.param_names), dtype=bool)

    def make_theta(self, flat) -> ParameterVector:
        flat = np.asarray(flat, dtype=float)
        if flat.size != len(self.param_names):
            raise ContractViolation(
                f"{self.name} expects {len(self.param_names)} parameters, got {flat.size}")
        return ParameterVector.from_flat(flat, self.drift_param_count, self.sigma_mode)

    def _check(self, x, beta):
        x = np.asarray(x, dtype=float)
        beta = np.asarray(beta, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ContractViolation(f"state must have trailing dimension {self.dim}, got {x.shape}")
        if beta.shape != (self.drift_param_count,):
            raise ContractViolation(
                f"beta must have length {self.drift_param_count}, got shape {beta.shape}")
        return x, beta

    # --- drift ---------------------------------------------------------

    def A(self, beta):
        raise NotImplementedError

    def N(self, x, beta):
        raise NotImplementedError

    def F(self, x, beta):
        """Full drift ``A(β) x + N(x; β)``."""
        x, beta = self._check(x, beta)
        return x @ self.A(beta).T + self.N(x, beta)

    def jacobian_F(self, x, beta):
        """``DF`` with ``[..., i, j] = ∂F^i/∂x_j``."""
        x, beta = self._check(x, beta)
        return _fd_jacobian(lambda y: self.F(y, beta), x)

    def hessians_F(self, x, beta):
        """Second derivatives ``[..., i, j, k] = ∂²F^i/∂x_j∂x_k``."""
        x, beta = self._check(x, beta)
        H = _fd_jacobian(lambda y: self.jacobian_F(y, beta), x, rel_step=1e-5)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def drift_beta_jacobian(self, x, beta):
        """``[..., i, k] = ∂F^i/∂β_k``."""
        x, beta = self._check(x, beta)
        cols = []
        for k in range(beta.size):
            step = 1e-6 * (1.0 + abs(beta[k]))
            e = np.zeros_like(beta)
            e[k] = step
            cols.append((self.F(x, beta + e) - self.F(x, beta - e)) / (2 * step))
        return np.stack(cols, axis=-1)

    # --- nonlinear flow ------------------------------------------------

    def _require_fallback(self, what):
        if not self.numeric_fallback:
            raise UnsupportedOperation(
                f"{self.name} has no closed-form {what} and numeric fallback is disabled")

    def nonlinear_flow(self, x, h, beta):
        """Flow ``f_h`` of ``dX = N(X) dt``; fallback is RK4 with ``h/8`` substeps."""
        x, beta = self._check(x, beta)
        if h == 0:
            return x.copy()
        self._require_fallback("nonlinear flow")
        n = self.flow_substeps
        dt = h / n
        y = x.copy()
        for _ in range(n):
            k1 = self.N(y, beta)
            k2 = self.N(y + 0.5 * dt * k1, beta)
            k3 = self.N(y + 0.5 * dt * k2, beta)
            k4 = self.N(y + dt * k3, beta)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return y

    def flow_jacobian(self, x, h, beta):
        """``D f_h(x)`` by central differences, ``[..., i, j] = ∂f^i/∂x_j``."""
        x, beta = self._check(x, beta)
        return _fd_jacobian(lambda y: self.nonlinear_flow(y, h, beta), x)

    def inverse_nonlinear_flow(self, x, h, beta):
        """Solve ``f_h(y) = x`` by damped Newton iteration started at ``f_{-h}(x)``."""
        x, beta = self._check(x, beta)
        if h == 0:
            return x.copy()
        self._require_fallback("inverse flow")
        y = self.nonlinear_flow(x, -h, beta)
        res = self.nonlinear_flow(y, h, beta) - x
        norm = np.linalg.norm(res, axis=-1)
        for _ in range(self.newton_max_iter):
            if np.all(norm < self.newton_tol * (1.0 + np.linalg.norm(x, axis=-1))):
                return y
            J = self.flow_jacobian(y, h, beta)
            try:
                delta = np.linalg.solve(J, res[..., None])[..., 0]
            except np.linalg.LinAlgError:
                raise InversionFailure("singular flow Jacobian during inversion", float(norm.max())) from None
            lam = np.ones(norm.shape)
            for _ in range(30):
                y_new = y - lam[..., None] * delta
                res_new = self.nonlinear_flow(y_new, h, beta) - x
                norm_new = np.linalg.norm(res_new, axis=-1)
                bad = ~(norm_new < norm) & (norm > 0)
                if not np.any(bad):
                    break
                lam = np.where(bad, 0.5 * lam, lam)
            y, res, norm = y_new, res_new, norm_new
        if np.all(norm < self.newton_tol * (1.0 + np.linalg.norm(x, axis=-1))):
            return y
        raise InversionFailure("Newton inversion of the nonlinear flow did not converge", float(np.max(norm)))

    def log_det_jacobian_flow(self, x, h, beta):
        """``log|det D f_h(x)|`` (forward flow)."""
        x, beta = self._check(x, beta)
        if h == 0:
            return np.zeros(x.shape[:-1])
        sign, logdet = np.linalg.slogdet(self.flow_jacobian(x, h, beta))
        if np.any(sign == 0):
            raise SingularJacobian(f"flow Jacobian of {self.name} is singular")
        return logdet

    def log_det_jacobian_inverse_flow(self, x, h, beta):
        """``log|det D f_h⁻¹(x)| = -log|det D f_h(f_h⁻¹(x))|``."""
        return -self.log_det_jacobian_flow(self.inverse_nonlinear_flow(x, h, beta), h, beta)


class LorenzModel(SplitModel):
    """Stochastic Lorenz system with ``β = (p, r, c)`` and diagonal ``ΣΣᵀ``.

    The split keeps ``-p x/2`` in both parts so that the nonlinear flow is a
    contraction in ``x`` combined with a rotation of ``(y, z - r)``::

        A = [[-p/2, p, 0], [0, -1, 0], [0, 0, -c]]
        N = (-p x/2, x (r - z), x y)
    """

    name = "lorenz"
    dim = 3
    param_names = ("p", "r", "c", "sigma1_sq", "sigma2_sq", "sigma3_sq")
    numeric_fallback = False

    @property
    def default_theta(self):
        return ParameterVector([10.0, 28.0, 8.0 / 3.0], [1.0, 2.0, 1.5])

    def A(self, beta):
        p, _, c = beta
        return np.array([[-p / 2, p, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -c]])

    def N(self, x, beta):
        p, r, _ = beta
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([-p * X / 2, X * (r - Z), X * Y], axis=-1)

    def F(self, x, beta):
        x, beta = self._check(x, beta)
        p, r, c = beta
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([p * (Y - X), r * X - Y - X * Z, X * Y - c * Z], axis=-1)

    def jacobian_F(self, x, beta):
        x, beta = self._check(x, beta)
        p, r, c = beta
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = -p
        J[..., 0, 1] = p
        J[..., 1, 0] = r - Z
        J[..., 1, 1] = -1.0
        J[..., 1, 2] = -X
        J[..., 2, 0] = Y
        J[..., 2, 1] = X
        J[..., 2, 2] = -c
        return J

    def hessians_F(self, x, beta):
        x, beta = self._check(x, beta)
        H = np.zeros(x.shape[:-1] + (3, 3, 3))
        H[..., 1, 0, 2] = H[..., 1, 2, 0] = -1.0
        H[..., 2, 0, 1] = H[..., 2, 1, 0] = 1.0
        return H

    def drift_beta_jacobian(self, x, beta):
        x, beta = self._check(x, beta)
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        G = np.zeros(x.shape[:-1] + (3, 3))
        G[..., 0, 0] = Y - X
        G[..., 1, 1] = X
        G[..., 2, 2] = -Z
        return G

    def nonlinear_flow(self, x, h, beta):
        x, beta = self._check(x, beta)
        p, r, _ = beta
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        decay = np.exp(-p * h / 2)
        phi = 2.0 * X * (1.0 - decay) / p
        cphi, sphi = np.cos(phi), np.sin(phi)
        W = Z - r
        return np.stack([decay * X, Y * cphi - W * sphi, Y * sphi + W * cphi + r], axis=-1)

    def inverse_nonlinear_flow(self, x, h, beta):
        return self.nonlinear_flow(x, -h, beta)

    def flow_jacobian(self, x, h, beta):
        x, beta = self._check(x, beta)
        p, r, _ = beta
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        decay = np.exp(-p * h / 2)
        k = 2.0 * (1.0 - decay) / p
        cphi, sphi = np.cos(k * X), np.sin(k * X)
        W = Z - r
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = decay
        J[..., 1, 0] = -k * (Y * sphi + W * cphi)
        J[..., 1, 1] = cphi
        J[..., 1, 2] = -sphi
        J[..., 2, 0] = k * (Y * cphi - W * sphi)
        J[..., 2, 1] = sphi
        J[..., 2, 2] = cphi
        return J

    def drift_polynomials(self, beta):
        from .generator import TrigPoly
        p, r, c = (float(b) for b in beta)
        X, Y, Z = (TrigPoly.var(i, 3) for i in range(3))
        return [p * (Y - X), r * X - Y - X * Z, X * Y - c * Z]

    def flow_trigpoly(self, h, beta):
        """Components of ``f_h`` as exact :class:`~splitsde.generator.TrigPoly` objects."""
        from .generator import TrigPoly
        p, r, _ = (float(b) for b in beta)
        decay = np.exp(-p * h / 2)
        w = np.array([2.0 * (1.0 - decay) / p, 0.0, 0.0])
        X, Y, Z = (TrigPoly.var(i, 3, w) for i in range(3))
        C, S = TrigPoly.cos(3, w), TrigPoly.sin(3, w)
        W = Z - r
        return [decay * X, Y * C - W * S, Y * S + W * C + r]

    def log_det_jacobian_flow(self, x, h, beta):
        # the rotation has unit determinant; only the x-contraction remains
        x, beta = self._check(x, beta)
        return np.full(x.shape[:-1], -beta[0] * h / 2)

    def log_det_jacobian_inverse_flow(self, x, h, beta):
        x, beta = self._check(x, beta)
        return np.full(x.shape[:-1], beta[0] * h / 2)


class OUModel(SplitModel):
    """Ornstein-Uhlenbeck process ``dX = -a X dt + Σ dW`` in ``dim`` dimensions.

    Everything is linear, so ``N ≡ 0`` and the nonlinear flow is the identity.
    """

    name = "ou"
    numeric_fallback = False

    def __init__(self, dim=1):
        self.dim = int(dim)
        if self.dim < 1:
            raise ContractViolation("dim must be positive")
        if self.dim == 1:
            self.param_names = ("a", "sigma_sq")
        else:
            self.param_names = ("a",) + tuple(f"sigma{i + 1}_sq" for i in range(self.dim))

    @property
    def default_theta(self):
        return ParameterVector([1.0], np.full(self.dim, 2.0))

    def A(self, beta):
        return -beta[0] * np.eye(self.dim)

    def N(self, x, beta):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jacobian_F(self, x, beta):
        x, beta = self._check(x, beta)
        return np.broadcast_to(self.A(beta), x.shape[:-1] + (self.dim, self.dim)).copy()

    def hessians_F(self, x, beta):
        x, beta = self._check(x, beta)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def drift_beta_jacobian(self, x, beta):
        x, beta = self._check(x, beta)
        return -x[..., None]

    def drift_polynomials(self, beta):
        from .generator import TrigPoly
        return [TrigPoly.var(i, self.dim) * (-float(beta[0])) for i in range(self.dim)]

    def flow_trigpoly(self, h, beta):
        from .generator import TrigPoly
        return [TrigPoly.var(i, self.dim) for i in range(self.dim)]

    def nonlinear_flow(self, x, h, beta):
        x, beta = self._check(x, beta)
        return x.copy()

    def inverse_nonlinear_flow(self, x, h, beta):
        x, beta = self._check(x, beta)
        return x.copy()

    def flow_jacobian(self, x, h, beta):
        x, beta = self._check(x, beta)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def log_det_jacobian_flow(self, x, h, beta):
        x, beta = self._check(x, beta)
        return np.zeros(x.shape[:-1])

    def log_det_jacobian_inverse_flow(self, x, h, beta):
        return self.log_det_jacobian_flow(x, h, beta)


_REGISTRY: dict[str, Callable[..., SplitModel]] = {
    "lorenz": LorenzModel,
    "ou": OUModel,
}


def register_model(name: str, factory: Callable[..., SplitModel], overwrite=False):
    """Make a user model available to :func:`get_model` and the CLI."""
    if name in _REGISTRY and not overwrite:
        raise ContractViolation(f"model id {name!r} already registered")
    _REGISTRY[name] = factory


def get_model(name: str, **kwargs) -> SplitModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ContractViolation(f"unknown model {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)


def available_models():
    return sorted(_REGISTRY)


# operation-style aliases --------------------------------------------------

def drift_eval(model: SplitModel, x, beta):
    return model.F(x, beta)


def nonlinear_flow(model: SplitModel, x, h, beta):
    return model.nonlinear_flow(x, h, beta)


def inverse_nonlinear_flow(model: SplitModel, x, h, beta):
    return model.inverse_nonlinear_flow(x, h, beta)


def log_det_jacobian_flow(model: SplitModel, x, h, beta):
    return model.log_det_jacobian_flow(x, h, beta)
