"""Splitting-scheme pseudo-likelihood estimation for SDEs with additive noise.

The model ``dX = A(β) X dt + N(X; β) dt + Σ dW`` is split into a linear
Ornstein-Uhlenbeck part, solved exactly in distribution, and a nonlinear ODE
part, solved by its flow ``f_h``. Composing the two gives the Lie-Trotter (LT)
and Strang (S) one-step maps whose Gaussian pseudo-likelihoods are minimized
to estimate ``θ = (β, ΣΣᵀ)``. Euler-Maruyama, Kessler order-2 and Ozaki
local-linearization objectives are included for comparison.
"""

from .errors import (ConfigError, ContractViolation, DegenerateCovariance, DivergenceError,
                     InitializationError, InversionFailure, ObjectiveUndefined, SingularJacobian,
                     UndefinedGradient, UnsupportedOperation)
from .experiments import (AsymptoticLaw, ConvergenceReport, MonteCarloReport, NormalityReport,
                          TimingReport, compute_asymptotic_law, moment_bounds, one_step_mean_errors,
                          run_are_study, run_convergence_study, run_normality_study,
                          run_timing_study, strong_errors)
from .linalg import OmegaH, expm, gaussian_quad_form, ll_integrals, van_loan_omega
from .models import (LorenzModel, OUModel, ParameterVector, SplitModel, available_models,
                     drift_eval, get_model, inverse_nonlinear_flow, log_det_jacobian_flow,
                     nonlinear_flow, register_model)
from .objectives import (ESTIMATORS, ObjectiveSpec, make_objective, nll_em, nll_k2, nll_ll,
                         nll_lt, nll_s)
from .optimize import EstimationResult, OptimizerConfig, fit, gradient, softplus
from .simulate import Trajectory, make_rng, simulate_em_fine, simulate_scheme

__version__ = "0.1.0"

__all__ = [
    "AsymptoticLaw", "ConfigError", "ContractViolation", "ConvergenceReport",
    "DegenerateCovariance", "DivergenceError", "ESTIMATORS", "EstimationResult",
    "InitializationError", "InversionFailure", "LorenzModel", "MonteCarloReport",
    "NormalityReport", "OUModel", "ObjectiveSpec", "ObjectiveUndefined", "OmegaH",
    "OptimizerConfig", "ParameterVector", "SingularJacobian", "SplitModel", "TimingReport",
    "Trajectory", "UndefinedGradient", "UnsupportedOperation", "available_models",
    "compute_asymptotic_law", "drift_eval", "expm", "fit", "gaussian_quad_form", "get_model",
    "gradient", "inverse_nonlinear_flow", "ll_integrals", "log_det_jacobian_flow",
    "make_objective", "make_rng", "moment_bounds", "nll_em", "nll_k2", "nll_ll", "nll_lt",
    "nll_s", "nonlinear_flow", "one_step_mean_errors", "register_model", "run_are_study",
    "run_convergence_study", "run_normality_study", "run_timing_study", "simulate_em_fine",
    "simulate_scheme", "softplus", "strong_errors", "van_loan_omega",
]
