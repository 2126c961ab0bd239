"""Sign-based resilient backpropagation (Rprop) with softplus positivity.

The optimizer works on raw parameters ``u``; entries flagged in the
positivity mask enter the objective as ``softplus(u) = log(1 + e^u)``.
Gradients are central finite differences. Evaluations that raise
:class:`ObjectiveUndefined` are replaced by ``penalty_value``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ContractViolation, InitializationError, ObjectiveUndefined, UndefinedGradient


def softplus(u):
    return np.logaddexp(0.0, u)


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ContractViolation("softplus inverse needs positive values")
    # log(e^y - 1), stable for large y
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    stop_tol: float = 1e-5
    init_value: float = 0.1
    step_init: float = 0.01
    step_min: float = 1e-8
    step_max: float = 1.0
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    gradient_mode: str = "finite_difference"
    penalty_value: float = 1e12

    def __post_init__(self):
        if not 0 < self.eta_minus < 1 < self.eta_plus:
            raise ContractViolation("need 0 < eta_minus < 1 < eta_plus")
        if not self.step_min < self.step_init < self.step_max:
            raise ContractViolation("need step_min < step_init < step_max")
        if self.gradient_mode not in ("finite_difference", "analytic_if_available"):
            raise ContractViolation(f"unknown gradient mode {self.gradient_mode!r}")
        if self.max_iters < 1 or not self.stop_tol > 0:
            raise ContractViolation("max_iters must be >= 1 and stop_tol > 0")

    def as_dict(self):
        return asdict(self)


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    wall_time: float
    failure_reason: str | None = None
    param_names: tuple = ()

    def as_record(self, **extra):
        rec = dict(extra)
        rec.update({
            "theta_hat": {n: float(v) for n, v in zip(self.param_names, self.theta_hat)}
            if self.param_names else [float(v) for v in self.theta_hat],
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "wall_time": float(self.wall_time),
            "failure_reason": self.failure_reason,
        })
        return rec


def _safe(fun, x):
    try:
        v = fun(x)
    except ObjectiveUndefined:
        return None
    return v if np.isfinite(v) else None


def gradient(fun: Callable, theta, rel_step=1e-6):
    """Central finite-difference gradient with step ``rel_step (1 + |θ_i|)``.

    Falls back to a one-sided difference when one side of the stencil is
    undefined; raises :class:`UndefinedGradient` when both are.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    f0 = None
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = rel_step * (1.0 + abs(theta[i]))
        fp = _safe(fun, theta + e)
        fm = _safe(fun, theta - e)
        if fp is not None and fm is not None:
            g[i] = (fp - fm) / (2 * e[i])
            continue
        if f0 is None:
            f0 = _safe(fun, theta)
        if f0 is None:
            raise UndefinedGradient("objective undefined at the base point")
        if fp is not None:
            g[i] = (fp - f0) / e[i]
        elif fm is not None:
            g[i] = (f0 - fm) / e[i]
        else:
            raise UndefinedGradient(f"objective undefined on both sides of coordinate {i}")
    return g


class _Penalized:
    """Raw-space objective ``u -> f(transform(u))`` with the penalty path."""

    def __init__(self, fun, mask, penalty):
        self.fun = fun
        self.mask = np.asarray(mask, dtype=bool)
        self.penalty = penalty

    def natural(self, u):
        return np.where(self.mask, softplus(u), u)

    def __call__(self, u):
        v = _safe(self.fun, self.natural(u))
        return self.penalty if v is None else v


def fit(objective: Callable, cfg: OptimizerConfig | None = None, positivity_mask=None,
        init=None, n_params=None, param_names=None, trace_path=None) -> EstimationResult:
    """Minimize ``objective`` with Rprop from the all-``init_value`` raw start.

    Parameters
    ----------
    objective : callable
        Maps a natural-space parameter vector to a float; may raise
        :class:`ObjectiveUndefined`. An :class:`~splitsde.objectives.ObjectiveSpec`
        works directly.
    cfg : OptimizerConfig, optional
    positivity_mask : array_like of bool, optional
        Parameters mapped through softplus. Defaults to the model's mask for
        an ObjectiveSpec, otherwise no mask.
    init : array_like, optional
        Raw-space starting point overriding ``cfg.init_value``.
    trace_path : path, optional
        Stream ``iteration, objective, max_step, max_change`` rows to CSV.

    Returns
    -------
    EstimationResult
        ``converged`` is true when every coordinate's step size fell below
        ``stop_tol``, i.e. the next parameter change would be smaller than
        the tolerance.
    """
    cfg = cfg or OptimizerConfig()
    model = getattr(objective, "model", None)
    if n_params is None:
        n_params = getattr(objective, "n_params", None)
        if n_params is None:
            n_params = np.size(init) if init is not None else np.size(positivity_mask)
    if param_names is None and model is not None:
        param_names = tuple(model.param_names)
    if positivity_mask is None:
        positivity_mask = model.positive_mask if model is not None else np.zeros(n_params, bool)
    positivity_mask = np.asarray(positivity_mask, dtype=bool)
    if positivity_mask.size != n_params:
        raise ContractViolation("positivity mask length does not match the parameter count")

    f = _Penalized(objective, positivity_mask, cfg.penalty_value)
    u = np.full(n_params, cfg.init_value, dtype=float) if init is None else np.array(init, dtype=float)

    t_start = time.perf_counter()
    if _safe(objective, f.natural(u)) is None:
        raise InitializationError("objective is undefined at the initial point")

    step = np.full(n_params, cfg.step_init)
    prev = np.zeros(n_params)
    converged = False
    failure = None
    writer = None
    fh = None
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "max_step", "max_change"])

    it = 0
    try:
        for it in range(1, cfg.max_iters + 1):
            try:
                g = gradient(f, u)
            except UndefinedGradient as exc:
                failure = str(exc)
                break
            prod = g * prev
            step = np.where(prod > 0, np.minimum(step * cfg.eta_plus, cfg.step_max), step)
            step = np.where(prod < 0, np.maximum(step * cfg.eta_minus, cfg.step_min), step)
            g = np.where(prod < 0, 0.0, g)
            change = -np.sign(g) * step
            u = u + change
            prev = g
            if writer is not None:
                writer.writerow([it, repr(f(u)), repr(float(step.max())), repr(float(np.abs(change).max()))])
            if np.max(step) < cfg.stop_tol:
                converged = True
                break
        else:
            failure = "maximum iterations reached"
    finally:
        if fh is not None:
            fh.close()

    theta_hat = f.natural(u)
    value = f(u)
    wall = time.perf_counter() - t_start
    if value >= cfg.penalty_value and failure is None:
        failure = "objective undefined at the final point"
        converged = False
    return EstimationResult(theta_hat, float(value), it, converged, wall, failure,
                            tuple(param_names or ()))
