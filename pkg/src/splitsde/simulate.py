"""Seeded trajectory generation.

Ground-truth data come from Euler-Maruyama on a fine grid followed by
subsampling. The splitting schemes themselves can also be simulated, which is
used for convergence studies.

Every path owns an independent Philox stream derived from ``(seed, stream)``;
simulating paths one at a time or as a batch gives bit-identical results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DivergenceError
from .linalg import expm, van_loan_omega
from .models import ParameterVector, SplitModel

# fine steps drawn per generator call; fixed so draw order never depends on N
_CHUNK = 4096


def _apply(M, x):
    """``x @ M.T`` row by row, so results do not depend on how many rows are batched."""
    return (x[..., None, :] * M).sum(axis=-1)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for repetition ``stream`` of base ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Trajectory:
    """Equidistant observations ``X_{t_0}, ..., X_{t_N}`` with step ``h``."""

    h: float
    states: np.ndarray
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ContractViolation("a trajectory needs an (N+1, d) array with N >= 1")
        if not self.h > 0:
            raise ContractViolation(f"step h must be positive, got {self.h}")
        if not np.all(np.isfinite(self.states)):
            raise ContractViolation("trajectory contains non-finite states")

    @property
    def N(self):
        return self.states.shape[0] - 1

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def times(self):
        return self.t0 + self.h * np.arange(self.N + 1)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(",".join(["t"] + [f"x{i + 1}" for i in range(self.dim)]) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")
        return path

    @classmethod
    def from_csv(cls, path, meta=None):
        """Read a trajectory CSV; the step is taken from the time column.

        Raises
        ------
        ContractViolation
            On a malformed header or row, with the 1-based line number.
        """
        rows = []
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ContractViolation("empty trajectory file") from None
            if not header or header[0].strip() != "t" or len(header) < 2:
                raise ContractViolation("line 1: header must be 't,x1,...,xd'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ContractViolation(
                        f"line {lineno}: expected {len(header)} fields, got {len(row)}")
                try:
                    vals = [float(v) for v in row]
                except ValueError:
                    raise ContractViolation(f"line {lineno}: non-numeric field") from None
                if not all(np.isfinite(vals)):
                    raise ContractViolation(f"line {lineno}: non-finite value")
                rows.append(vals)
        if len(rows) < 2:
            raise ContractViolation("trajectory needs at least two rows")
        data = np.array(rows)
        t = data[:, 0]
        dt = np.diff(t)
        h = float(np.mean(dt))
        if not h > 0 or np.max(np.abs(dt - h)) > 1e-9 * max(1.0, abs(t[-1])):
            raise ContractViolation("time column is not equidistant and increasing")
        return cls(h, data[:, 1:], float(t[0]), dict(meta or {}))


def _as_theta(model: SplitModel, theta) -> ParameterVector:
    if isinstance(theta, ParameterVector):
        return theta
    return model.make_theta(theta)


def _x0_batch(x0, m, d):
    x = np.array(x0, dtype=float)
    if x.shape == (d,):
        return np.tile(x, (m, 1))
    if x.shape == (m, d):
        return x.copy()
    raise ContractViolation(f"x0 must have shape ({d},) or ({m}, {d}), got {x.shape}")


def simulate_em_fine_batch(model: SplitModel, theta0, x0, h_target, N, oversample, seed,
                           streams, burn_in=0.0):
    """Fine-grid Euler-Maruyama for several independent streams at once.

    Returns an array of shape ``(len(streams), N + 1, d)`` holding every
    ``oversample``-th fine state after discarding ``burn_in`` model time.
    """
    theta0 = _as_theta(model, theta0)
    if int(oversample) < 1 or int(N) < 1:
        raise ContractViolation("oversample and N must be >= 1")
    oversample, N = int(oversample), int(N)
    d = model.dim
    streams = list(streams)
    m = len(streams)
    dt = h_target / oversample
    L = np.linalg.cholesky(theta0.sigma_matrix()) if np.any(theta0.sigma_param) else np.zeros((d, d))
    sq = np.sqrt(dt)
    beta = theta0.beta
    rngs = [make_rng(seed, s) for s in streams]

    n_burn = int(round(burn_in / dt))
    total = n_burn + N * oversample
    out = np.empty((m, N + 1, d))
    x = _x0_batch(x0, m, d)
    if n_burn == 0:
        out[:, 0] = x

    step = 0
    while step < total:
        c = min(_CHUNK, total - step)
        z = np.stack([g.standard_normal((c, d)) for g in rngs])
        noise = sq * _apply(L, z)
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(c):
                x = x + dt * model.F(x, beta) + noise[:, j]
                k = step + j + 1 - n_burn
                if k >= 0 and k % oversample == 0:
                    if not np.all(np.isfinite(x)):
                        raise DivergenceError("Euler-Maruyama path blew up", step + j + 1)
                    out[:, k // oversample] = x
        if not np.all(np.isfinite(x)):
            raise DivergenceError("Euler-Maruyama path blew up", step + c)
        step += c
    return out


def simulate_em_fine(model: SplitModel, theta0, x0, h_target, N, oversample=1, seed=0,
                     stream=0, burn_in=0.0) -> Trajectory:
    """Simulate with Euler-Maruyama at step ``h_target/oversample`` and subsample.

    Parameters
    ----------
    model : SplitModel
    theta0 : ParameterVector or array_like
        True parameter.
    x0 : array_like, shape (d,)
        Initial state (before burn-in).
    h_target : float
        Observation step of the returned trajectory.
    N : int
        Number of transitions; ``N + 1`` states are returned.
    oversample : int
        Fine steps per observation step.
    seed, stream : int
        Identify the random stream.
    burn_in : float
        Model time simulated and discarded before the first observation.

    Raises
    ------
    DivergenceError
        If the path becomes non-finite.
    """
    states = simulate_em_fine_batch(model, theta0, x0, h_target, N, oversample, seed,
                                    [stream], burn_in)[0]
    meta = {"generator": "em_fine", "seed": int(seed), "stream": int(stream),
            "oversample": int(oversample), "model": model.name}
    return Trajectory(h_target, states, 0.0, meta)


def scheme_step(model: SplitModel, x, h, beta, expAh, xi, scheme):
    """One LT or S step from states ``x`` given Gaussian innovations ``xi``."""
    if scheme == "LT":
        return _apply(expAh, model.nonlinear_flow(x, h, beta)) + xi
    if scheme == "S":
        y = _apply(expAh, model.nonlinear_flow(x, h / 2, beta)) + xi
        return model.nonlinear_flow(y, h / 2, beta)
    raise ContractViolation(f"scheme must be 'LT' or 'S', got {scheme!r}")


def simulate_scheme_batch(model: SplitModel, theta0, x0, h, N, scheme, seed, streams):
    """Simulate the LT or S splitting scheme for several streams."""
    theta0 = _as_theta(model, theta0)
    d = model.dim
    streams = list(streams)
    m = len(streams)
    beta = theta0.beta
    A = model.A(beta)
    E = expm(A * h)
    S = theta0.sigma_matrix()
    L = van_loan_omega(A, S, h).chol if np.any(S) else np.zeros((d, d))
    rngs = [make_rng(seed, s) for s in streams]
    out = np.empty((m, N + 1, d))
    x = _x0_batch(x0, m, d)
    out[:, 0] = x
    step = 0
    while step < N:
        c = min(_CHUNK, N - step)
        xi = _apply(L, np.stack([g.standard_normal((c, d)) for g in rngs]))
        with np.errstate(over="ignore", invalid="ignore"):
            for j in range(c):
                x = scheme_step(model, x, h, beta, E, xi[:, j], scheme)
                if not np.all(np.isfinite(x)):
                    raise DivergenceError(f"{scheme} scheme blew up", step + j + 1)
                out[:, step + j + 1] = x
        step += c
    return out


def simulate_scheme(model: SplitModel, theta0, x0, h, N, scheme="S", seed=0, stream=0) -> Trajectory:
    """Simulate ``X_k = e^{Ah} f_h(X_{k-1}) + ξ`` (LT) or
    ``X_k = f_{h/2}(e^{Ah} f_{h/2}(X_{k-1}) + ξ)`` (S) with ``ξ ~ N(0, Ω_h)``."""
    states = simulate_scheme_batch(model, theta0, x0, h, N, scheme, seed, [stream])[0]
    meta = {"generator": f"scheme_{scheme}", "seed": int(seed), "stream": int(stream),
            "model": model.name}
    return Trajectory(h, states, 0.0, meta)
