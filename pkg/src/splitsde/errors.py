"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """Input violates a documented precondition (shape, finiteness, domain)."""


class UnsupportedOperation(NotImplementedError):
    """The model cannot perform the requested operation."""


class InversionFailure(RuntimeError):
    """Newton inversion of the nonlinear flow did not converge."""

    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(f"{message} (residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


class SingularJacobian(RuntimeError):
    """Flow Jacobian is singular at the evaluation point."""


class DegenerateCovariance(RuntimeError):
    """A covariance matrix failed Cholesky factorization."""

    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(f"{message} (smallest eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class DivergenceError(RuntimeError):
    """A simulated path produced non-finite states."""

    def __init__(self, message, step=-1):
        super().__init__(f"{message} at step {step}")
        self.step = step


class ObjectiveUndefined(RuntimeError):
    """The objective cannot be evaluated at the proposed parameter."""


class InitializationError(RuntimeError):
    """The optimizer's starting point is not admissible."""


class UndefinedGradient(RuntimeError):
    """Both sides of a finite-difference stencil were undefined."""


class ConfigError(ValueError):
    """Invalid run configuration; carries a field or line hint."""
