"""
A small Monte Carlo study
=========================

Repeat simulate-and-fit M times, then summarize the mean absolute relative
error (ARE) per parameter and compare the spread of the scaled estimates
with the asymptotic normal law. The OU process keeps this quick; swap in
"lorenz" and larger M for the real thing (or use `splitsde study are`).
"""

import numpy as np

from splitsde import compute_asymptotic_law, run_are_study
from splitsde.experiments import normality_from_report

report = run_are_study("ou", ["EM", "LT", "S"], h_grid=[0.05, 0.2], N=1000, M=40, seed=11)
for line in report.summary_lines():
    print(line)

# For OU the Strang and Lie-Trotter objectives are the exact likelihood, so
# their errors do not grow with h, while Euler-Maruyama's do.

# Asymptotic law: √(Nh)(â - a) → N(0, 2a), √N(σ̂² - σ²) → N(0, 2σ⁴)
pool = np.random.default_rng(0).normal(0.0, 1.0, (100_000, 1))  # stationary OU(1, σ²=2)
law = compute_asymptotic_law("ou", None, pool)
norm = normality_from_report(report, "ou", None, law)
for est in ("S",):
    for h in (0.05, 0.2):
        for p in ("a", "sigma_sq"):
            r = [row for row in norm.rows if row[0] == est and row[2] == h and row[3] == p
                 and row[4] == "raw"][0]
            print(f"{est} h={h:<5} {p:<9} empirical sd {r[6]:.3f}  theory {r[8]:.3f}")
