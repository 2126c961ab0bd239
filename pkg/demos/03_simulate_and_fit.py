"""
Simulate, then estimate with five pseudo-likelihoods
====================================================

Ground truth comes from Euler-Maruyama on a grid 100 times finer than the
observation step. Each estimator minimizes its negative log
pseudo-likelihood with Rprop, starting from softplus(0.1) for every
parameter.
"""

import numpy as np

from splitsde import ESTIMATORS, LorenzModel, fit, make_objective, simulate_em_fine

lorenz = LorenzModel()
theta0 = lorenz.default_theta
data = simulate_em_fine(lorenz, theta0, np.ones(3), h_target=0.01, N=1000, oversample=100, seed=3,
                        burn_in=10.0)
print(f"{data.N} transitions at h = {data.h}")

print(f"\n{'':<4}" + "".join(f"{n:>11}" for n in lorenz.param_names) + "   iters   seconds")
print(f"{'true':<4}" + "".join(f"{v:>11.4f}" for v in theta0.flat))
for est in ESTIMATORS:
    res = fit(make_objective(est, lorenz, data))
    print(f"{est:<4}" + "".join(f"{v:>11.4f}" for v in res.theta_hat)
          + f"   {res.iterations:>5}   {res.wall_time:7.2f}")

# At h = 0.01 the Strang estimate is close to the truth; Lie-Trotter is
# visibly biased in p and c, and Euler-Maruyama in the diffusion parameters.
