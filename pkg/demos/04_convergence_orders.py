"""
Convergence orders of the splitting schemes
===========================================

The exact conditional mean E[X_h | x] is computed from the generator series
Σ h^j/j! L^j x (polynomial drift, constant noise), and each scheme's mean by
Gauss-Hermite quadrature over its Gaussian innovation, so the one-step
errors are free of sampling noise. The Strang residual
Z = f_{h/2}⁻¹(X_h) - e^{Ah} f_{h/2}(x) has mean O(h³) and second moment
hΣΣᵀ + O(h²).
"""

import numpy as np

from splitsde import LorenzModel, moment_bounds, one_step_mean_errors, strong_errors
from splitsde.experiments import attractor_points, loglog_slope

lorenz = LorenzModel()
theta0 = lorenz.default_theta
hs = 0.32 * 2.0 ** -np.arange(5, 10)
pts = attractor_points(lorenz, theta0, 2, seed=0)

errs = one_step_mean_errors(lorenz, theta0, hs, pts, ("EM", "LT", "S"))
for s, e in errs.items():
    print(f"one-step mean error {s:<3} slope {loglog_slope(hs, e)[0]:.2f}   {e}")

mean_norm, cov_err = moment_bounds(lorenz, theta0, hs, pts)
print(f"\n‖E[Z]‖ slope {loglog_slope(hs, mean_norm)[0]:.2f}")
print(f"‖E[ZZᵀ] - hΣΣᵀ‖ slope {loglog_slope(hs, cov_err)[0]:.2f}")

# Strong (pathwise) errors: all schemes share the fine Brownian increments
strong = strong_errors(lorenz, theta0, hs[:3], n_paths=200, T=0.2, ref_factor=8)
for s, e in strong.items():
    print(f"strong error {s:<3} slope {loglog_slope(hs[:3], e)[0]:.2f}")
