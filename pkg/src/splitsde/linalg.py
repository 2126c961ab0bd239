"""Dense linear-algebra kernels.

Matrix exponential (scaling and squaring with Padé approximants), the Van Loan
block-exponential integrals used by the Gaussian transition covariances, and
Cholesky-backed quadratic forms. Every kernel accepts stacked inputs of shape
``(..., n, n)`` so that per-observation quantities (local linearization) can
be computed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractViolation, DegenerateCovariance

# Higham (2005) backward-error bounds on the 1-norm for Padé degrees 3..13.
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def _pade_uv(A, m):
    b = _PADE[m]
    eye = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        u = A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) \
            + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye
        U = A @ u
        V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) \
            + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
        return U, V
    # low degrees: accumulate even powers directly
    u = b[1] * eye
    V = b[0] * eye
    P = eye
    for k in range(1, m // 2 + 1):
        P = P @ A2 if k > 1 else A2
        u = u + b[2 * k + 1] * P
        V = V + b[2 * k] * P
    return A @ u, V


def expm(M):
    """Matrix exponential of one matrix or a stack of matrices.

    Uses the scaling-and-squaring method with a diagonal Padé approximant,
    choosing the degree from the largest 1-norm in the stack and a
    per-matrix scaling exponent when degree 13 is needed.

    Parameters
    ----------
    M : array_like, shape (..., n, n)

    Returns
    -------
    ndarray, shape (..., n, n)
    """
    A = np.asarray(M, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ContractViolation(f"expm expects square matrices, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractViolation("expm received non-finite entries")
    if A.shape[-1] == 0:
        return A.copy()

    norms = np.abs(A).sum(axis=-2).max(axis=-1)
    top = float(norms.max()) if norms.size else 0.0
    for m in (3, 5, 7, 9):
        if top <= _THETA[m]:
            U, V = _pade_uv(A, m)
            return np.linalg.solve(V - U, V + U)

    s = np.maximum(0, np.ceil(np.log2(np.maximum(norms, 1e-300) / _THETA[13]))).astype(int)
    scaled = A / np.ldexp(1.0, s)[..., None, None]
    U, V = _pade_uv(scaled, 13)
    R = np.linalg.solve(V - U, V + U)
    if R.ndim == 2:
        for _ in range(int(s)):
            R = R @ R
        return R
    for j in range(int(s.max())):
        idx = s > j
        R[idx] = R[idx] @ R[idx]
    return R


@dataclass(frozen=True)
class OmegaH:
    """Symmetric positive definite covariance with its Cholesky factor."""

    matrix: np.ndarray
    chol: np.ndarray
    log_det: float

    @classmethod
    def factor(cls, matrix) -> "OmegaH":
        """Symmetrize and factorize; raise DegenerateCovariance on failure."""
        S = np.asarray(matrix, dtype=float)
        S = 0.5 * (S + S.T)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            lam = float(np.linalg.eigvalsh(S)[0]) if np.all(np.isfinite(S)) else float("nan")
            raise DegenerateCovariance("covariance is not positive definite", lam) from None
        return cls(S, L, float(2.0 * np.sum(np.log(np.diag(L)))))


def van_loan_blocks(A, S, h):
    """Return ``Ω = ∫_0^h e^{A(h-u)} S e^{Aᵀ(h-u)} du`` for stacked ``A``.

    The 2d x 2d block matrix ``[[A, S], [0, -Aᵀ]]`` is exponentiated after
    scaling by ``h``; with top blocks ``B`` (= e^{Ah}) and ``C`` the integral
    is ``C Bᵀ``. The result is symmetrized.
    """
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    d = A.shape[-1]
    P = np.zeros(A.shape[:-2] + (2 * d, 2 * d))
    P[..., :d, :d] = A
    P[..., :d, d:] = S
    P[..., d:, d:] = -np.swapaxes(A, -1, -2)
    E = expm(h * P)
    B = E[..., :d, :d]
    C = E[..., :d, d:]
    Om = C @ np.swapaxes(B, -1, -2)
    return 0.5 * (Om + np.swapaxes(Om, -1, -2))


def van_loan_omega(A, SigmaSigmaT, h) -> OmegaH:
    """Covariance of the linear (Ornstein-Uhlenbeck) sub-step over time ``h``.

    Raises
    ------
    ContractViolation
        If ``h <= 0``.
    DegenerateCovariance
        If the result cannot be Cholesky-factorized.
    """
    if not h > 0:
        raise ContractViolation(f"step h must be positive, got {h}")
    return OmegaH.factor(van_loan_blocks(A, SigmaSigmaT, h))


def ll_integrals(J, h):
    """Integrals ``R_i = ∫_0^h exp(J u) u^i du`` for ``i = 0, 1``.

    ``R0`` is the top-right block of ``exp(h [[0, I], [0, J]])``, whose
    lower-right block is ``exp(hJ)``. ``R1`` is recovered as ``exp(hJ) @ B``
    where ``B`` is the top-right block of
    ``exp(h [[-J, I, 0], [0, 0, I], [0, 0, 0]])``. ``J`` may be stacked.
    """
    if not h > 0:
        raise ContractViolation(f"step h must be positive, got {h}")
    J = np.asarray(J, dtype=float)
    d = J.shape[-1]
    batch = J.shape[:-2]
    eye = np.eye(d)

    P1 = np.zeros(batch + (2 * d, 2 * d))
    P1[..., :d, d:] = eye
    P1[..., d:, d:] = J
    E1 = expm(h * P1)
    R0 = E1[..., :d, d:]
    expJ = E1[..., d:, d:]  # exp(hJ) comes for free as the lower-right block

    P2 = np.zeros(batch + (3 * d, 3 * d))
    P2[..., :d, :d] = -J
    P2[..., :d, d:2 * d] = eye
    P2[..., d:2 * d, 2 * d:] = eye
    B = expm(h * P2)[..., :d, 2 * d:]
    R1 = expJ @ B
    return R0, R1


def gaussian_quad_form(residual, cov: OmegaH):
    """Evaluate ``rᵀ Σ⁻¹ r`` through the Cholesky factor.

    ``residual`` may be a single vector (returns a float) or an ``(n, d)``
    array of vectors (returns an ``(n,)`` array).
    """
    r = np.asarray(residual, dtype=float)
    y = solve_triangular(cov.chol, r.T, lower=True, check_finite=False)
    q = np.sum(y * y, axis=0)
    return float(q) if r.ndim == 1 else q
