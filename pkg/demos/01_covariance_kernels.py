"""
Transition covariances from block-matrix exponentials
======================================================

The Ornstein-Uhlenbeck part of a split SDE has Gaussian transitions with
covariance Ω_h = ∫_0^h e^{Au} ΣΣᵀ e^{Aᵀu} du. One matrix exponential of a
2d×2d block matrix gives it exactly; here we compare against brute-force
quadrature and look at how fast the small-h expansion takes over.
"""

import numpy as np
from scipy.linalg import expm as scipy_expm

from splitsde import LorenzModel, ll_integrals, van_loan_omega

lorenz = LorenzModel()
theta = lorenz.default_theta
A = lorenz.A(theta.beta)
S = theta.sigma_matrix()
print("A =\n", A)

# Brute force: Gauss-Legendre on the integrand
def omega_quad(A, S, h, nodes=40):
    z, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * h * (z + 1)
    return 0.5 * h * sum(wi * scipy_expm(A * ui) @ S @ scipy_expm(A.T * ui) for wi, ui in zip(w, u))


for h in (0.001, 0.01, 0.1):
    om = van_loan_omega(A, S, h)
    err = np.abs(om.matrix - omega_quad(A, S, h)).max()
    print(f"h={h:<6} max |Ω_vanloan - Ω_quad| = {err:.2e}   log det Ω = {om.log_det:.4f}")

# For small h, Ω_h ≈ hS + h²/2 (AS + SAᵀ); the remainder is O(h³)
hs = np.logspace(-1, -3, 5)
res = [np.linalg.norm(van_loan_omega(A, S, h).matrix - (h * S + h * h / 2 * (A @ S + S @ A.T)))
       for h in hs]
print("\nsecond-order remainder:", np.array(res))
print("log-log slope:", np.polyfit(np.log(hs), np.log(res), 1)[0])

# The local-linearization integrals R0 = ∫ e^{Ju} du and R1 = ∫ u e^{Ju} du,
# evaluated at the drift Jacobian of a point on the attractor
J = lorenz.jacobian_F(np.array([-5.0, -7.0, 20.0]), theta.beta)
R0, R1 = ll_integrals(J, 0.01)
print("\nJ R0 + I == e^{hJ}:", np.allclose(J @ R0 + np.eye(3), scipy_expm(0.01 * J)))
print("R1 ≈ h²/2 I for small h:", np.round(R1 / (0.01 ** 2 / 2), 3).diagonal())
