"""Monte Carlo studies: estimation accuracy, timing, asymptotic normality and
numerical convergence orders.

Every repetition ``rep`` of a cell draws its data from the stream
``cell_index * STREAM_STRIDE + rep`` of the base seed, so repetitions can be
simulated in any grouping (one batch, several worker processes) and the
results are identical. All estimators of a cell are fitted to the same
trajectories. Output tables are sorted by (estimator, h, N, rep) before they
are written, and floats are written with 17 significant digits, so re-running
with the same seed reproduces the CSVs byte for byte (apart from wall-clock
columns).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import solve_ivp

from .errors import ContractViolation, DivergenceError, InitializationError
from .generator import TrigPoly, expectation_series, polynomial_drift
from .linalg import expm, van_loan_omega
from .models import ParameterVector, get_model
from .objectives import ESTIMATORS, make_objective
from .optimize import OptimizerConfig, fit, softplus_inverse
from .simulate import Trajectory, make_rng, simulate_em_fine_batch

STREAM_STRIDE = 1_000_000
DEFAULT_BURN_IN = 10.0
FINE_STEP = 1e-4


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else str(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Write rows with a fixed float format (``repr`` of Python floats)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_dat(path, header, rows):
    """Whitespace-separated table with a ``#`` header, readable by gnuplot."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")
    return path


def loglog_slope(h, err):
    """Least-squares slope and r² of ``log err`` against ``log h``."""
    x, y = np.log(np.asarray(h, float)), np.log(np.asarray(err, float))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)


def _resolve_model(model):
    return get_model(model) if isinstance(model, str) else model


def _resolve_theta(model, theta0):
    if theta0 is None:
        theta0 = model.default_theta
        if theta0 is None:
            raise ContractViolation(f"model {model.name!r} has no default parameter")
    if not isinstance(theta0, ParameterVector):
        theta0 = model.make_theta(theta0)
    return theta0


def _default_x0(model, x0):
    """``(1, ..., 1)`` unless given; the burn-in moves it into the stationary regime."""
    if x0 is None:
        return np.ones(model.dim)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ContractViolation(f"x0 must have shape ({model.dim},)")
    return x0


def oversample_for(h, fine_step=FINE_STEP):
    """Smallest integer ``k`` with ``h / k <= fine_step``."""
    return max(1, int(math.ceil(h / fine_step - 1e-9)))


# ---------------------------------------------------------------------------
# estimation studies


@dataclass
class FitRecord:
    estimator: str
    h: float
    N: int
    rep: int
    theta_hat: np.ndarray | None
    converged: bool
    iterations: int
    wall_time: float
    objective: float
    failure: str | None = None

    @property
    def usable(self):
        return self.converged and self.theta_hat is not None


@dataclass
class MonteCarloReport:
    """Per-repetition fits of a grid of (estimator, h, N) cells.

    ``seeds`` records the base seed and the stream layout. ``M`` is the
    number of attempted repetitions per cell.
    """

    model_name: str
    param_names: tuple
    theta0: np.ndarray
    M: int
    records: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    def cells(self):
        keys = sorted({(r.estimator, r.h, r.N) for r in self.records})
        return keys

    def cell(self, estimator, h, N):
        return sorted((r for r in self.records if (r.estimator, r.h, r.N) == (estimator, h, N)),
                      key=lambda r: r.rep)

    def deviations(self, estimator, h, N, converged_only=True):
        """``(M_used, p)`` array of ``θ̂ - θ₀``."""
        rows = [r.theta_hat - self.theta0 for r in self.cell(estimator, h, N)
                if r.theta_hat is not None and (r.converged or not converged_only)]
        return np.array(rows).reshape(-1, self.theta0.size)

    def are(self, estimator, h, N):
        """Mean absolute relative error per parameter over converged repetitions."""
        dev = self.deviations(estimator, h, N)
        if dev.shape[0] == 0:
            return np.full(self.theta0.size, np.nan)
        return np.mean(np.abs(dev) / np.abs(self.theta0), axis=0)

    def mean_and_se(self, estimator, h, N):
        dev = self.deviations(estimator, h, N)
        m = dev.shape[0]
        if m < 2:
            return np.full(self.theta0.size, np.nan), np.full(self.theta0.size, np.nan)
        return dev.mean(axis=0), dev.std(axis=0, ddof=1) / np.sqrt(m)

    def counts(self, estimator, h, N):
        recs = self.cell(estimator, h, N)
        return len(recs), sum(r.usable for r in recs)

    def median_wall_time(self, estimator, h, N):
        t = [r.wall_time for r in self.cell(estimator, h, N) if r.theta_hat is not None]
        return float(np.median(t)) if t else float("nan")

    # tables ------------------------------------------------------------

    def are_rows(self):
        for est, h, N in self.cells():
            a = self.are(est, h, N)
            _, mc = self.counts(est, h, N)
            for name, v in zip(self.param_names, a):
                yield (est, h, N, name, v, mc)

    def deviation_rows(self):
        for est, h, N in self.cells():
            for r in self.cell(est, h, N):
                if r.theta_hat is None:
                    continue
                for name, v in zip(self.param_names, r.theta_hat - self.theta0):
                    yield (est, h, N, name, r.rep, v)

    def fit_rows(self):
        for est, h, N in self.cells():
            for r in self.cell(est, h, N):
                yield (est, h, N, r.rep, r.converged, r.iterations, r.objective, r.failure or "")

    def summary_lines(self):
        lines = [f"model: {self.model_name}", "theta0: " + ", ".join(
            f"{n}={v:g}" for n, v in zip(self.param_names, self.theta0)),
            f"seed: {self.seeds.get('seed')}  stream layout: {self.seeds.get('layout')}", ""]
        lines.append(f"{'estimator':<9} {'h':>8} {'N':>7} {'M':>5} {'M_conv':>7} {'median_s':>10}  ARE")
        for est, h, N in self.cells():
            m, mc = self.counts(est, h, N)
            are = " ".join(f"{n}={v:.3g}" for n, v in zip(self.param_names, self.are(est, h, N)))
            lines.append(f"{est:<9} {h:>8g} {N:>7d} {m:>5d} {mc:>7d} "
                         f"{self.median_wall_time(est, h, N):>10.3f}  {are}")
        failures = [r for r in self.records if r.failure]
        if failures:
            lines.append("")
            lines.append(f"{len(failures)} repetition(s) recorded a failure:")
            for r in sorted(failures, key=lambda r: (r.estimator, r.h, r.N, r.rep))[:50]:
                lines.append(f"  {r.estimator} h={r.h:g} N={r.N} rep={r.rep}: {r.failure}")
        return lines

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "are.csv", ["estimator", "h", "N", "param", "are", "m_converged"],
                  self.are_rows())
        write_csv(out / "deviations.csv", ["estimator", "h", "N", "param", "rep", "deviation"],
                  self.deviation_rows())
        write_csv(out / "fits.csv", ["estimator", "h", "N", "rep", "converged", "iterations",
                                     "objective", "failure"], self.fit_rows())
        write_dat(out / "are.dat", ["estimator", "h", "N", "param", "are", "m_converged"],
                  self.are_rows())
        (out / "summary.txt").write_text("\n".join(self.summary_lines()) + "\n")
        return out


def _start_point(model, theta0, init):
    """Raw-space start for :func:`fit`; ``None`` keeps the configured constant."""
    if init is None or (isinstance(init, str) and init == "default"):
        return None
    if isinstance(init, str) and init == "theta0":
        flat = theta0.flat
        mask = model.positive_mask
        return np.where(mask, softplus_inverse(np.where(mask, flat, 1.0)), flat)
    return np.asarray(init, dtype=float)


def _fit_block(task):
    """Simulate a group of repetitions and fit every estimator to each.

    Runs in worker processes, so everything it needs travels in ``task``.
    """
    model = task["model"]
    theta0 = task["theta0"]
    h, Ns, reps = task["h"], task["N_list"], task["reps"]
    N_max = max(Ns)
    streams = [task["stream_base"] + r for r in reps]
    paths = {}
    diverged = {}
    try:
        batch = simulate_em_fine_batch(model, theta0, task["x0"], h, N_max, task["oversample"],
                                       task["seed"], streams, task["burn_in"])
        paths = dict(zip(reps, batch))
    except DivergenceError:
        # locate the offending repetitions one by one
        for r, s in zip(reps, streams):
            try:
                paths[r] = simulate_em_fine_batch(model, theta0, task["x0"], h, N_max,
                                                  task["oversample"], task["seed"], [s],
                                                  task["burn_in"])[0]
            except DivergenceError as exc:
                diverged[r] = str(exc)

    init = _start_point(model, theta0, task["init"])
    out = []
    for r in reps:
        for N in Ns:
            if r in diverged:
                for est in task["estimators"]:
                    out.append(FitRecord(est, h, N, r, None, False, 0, 0.0, float("nan"),
                                         "data generation diverged: " + diverged[r]))
                continue
            traj = Trajectory(h, paths[r][:N + 1])
            for est in task["estimators"]:
                obj = make_objective(est, model, traj)
                try:
                    res = fit(obj, task["cfg"], init=init)
                except InitializationError as exc:
                    out.append(FitRecord(est, h, N, r, None, False, 0, 0.0, float("nan"), str(exc)))
                    continue
                out.append(FitRecord(est, h, N, r, np.asarray(res.theta_hat), res.converged,
                                     res.iterations, res.wall_time, res.objective,
                                     res.failure_reason))
    return out


def _split(seq, parts):
    parts = max(1, min(parts, len(seq)))
    k, rem = divmod(len(seq), parts)
    out, i = [], 0
    for j in range(parts):
        n = k + (j < rem)
        out.append(seq[i:i + n])
        i += n
    return out


def _run_tasks(tasks, threads):
    if threads <= 1 or len(tasks) == 1:
        return [rec for t in tasks for rec in _fit_block(t)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return [rec for chunk in pool.map(_fit_block, tasks) for rec in chunk]


def default_threads():
    return os.cpu_count() or 1


def run_are_study(model, estimators, h_grid, N, M, seed, theta0=None, cfg=None, x0=None,
                  burn_in=DEFAULT_BURN_IN, fine_step=FINE_STEP, init=None, threads=1,
                  rep_offset=0) -> MonteCarloReport:
    """Fit every estimator to ``M`` simulated trajectories per step size.

    Parameters
    ----------
    model : SplitModel or str
    estimators : sequence of str
        Subset of ``EM, K2, LL, LT, S``.
    h_grid : sequence of float
    N : int or sequence of int
        Sample sizes. Several sizes reuse prefixes of the same trajectories.
    M : int
        Repetitions per cell.
    seed : int
    theta0 : ParameterVector or array_like, optional
        True parameter; the model default when omitted.
    init : None, "theta0" or array_like
        Optimizer start in raw space; ``None`` is the all-``init_value`` start.
    threads : int
        Worker processes; repetitions are split into contiguous groups.
    rep_offset : int
        First repetition index, so that a study can be extended with fresh
        repetitions that do not reuse streams.

    Returns
    -------
    MonteCarloReport
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    estimators = [e.upper() for e in estimators]
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ContractViolation(f"unknown estimators {bad}; expected a subset of {ESTIMATORS}")
    Ns = sorted({int(n) for n in np.atleast_1d(N)})
    if M < 1 or min(Ns) < 1:
        raise ContractViolation("M and N must be positive")
    cfg = cfg or OptimizerConfig()
    x0 = _default_x0(model, x0)

    reps = list(range(rep_offset, rep_offset + int(M)))
    tasks = []
    for ci, h in enumerate(h_grid):
        h = float(h)
        for group in _split(reps, threads):
            tasks.append(dict(model=model, theta0=theta0, h=h, N_list=Ns, reps=group,
                              stream_base=ci * STREAM_STRIDE, seed=int(seed), x0=x0,
                              burn_in=float(burn_in), oversample=oversample_for(h, fine_step),
                              estimators=estimators, cfg=cfg, init=init))
    records = _run_tasks(tasks, threads)
    records.sort(key=lambda r: (r.estimator, r.h, r.N, r.rep))
    return MonteCarloReport(model.name, tuple(model.param_names), theta0.flat, int(M), records,
                            {"seed": int(seed), "layout": f"stream = h_index*{STREAM_STRIDE} + rep",
                             "h_grid": [float(h) for h in h_grid], "rep_offset": rep_offset})


# ---------------------------------------------------------------------------
# timing


@dataclass
class TimingReport:
    """Median fit wall time per (estimator, N, h) and linear slopes in N."""

    rows: list  # (estimator, N, h, median_seconds, median_iterations)

    def median(self, estimator, N, h):
        for e, n, hh, t, _ in self.rows:
            if (e, n, hh) == (estimator, N, h):
                return t
        raise KeyError((estimator, N, h))

    def slope(self, estimator, h=None):
        """Least-squares slope of median seconds against N (seconds per observation)."""
        pts = [(n, t) for e, n, hh, t, _ in self.rows if e == estimator and (h is None or hh == h)]
        if h is None:
            hs = sorted({hh for e, _, hh, _, _ in self.rows if e == estimator})
            pts = [(n, t) for e, n, hh, t, _ in self.rows if e == estimator and hh == hs[0]]
        n, t = np.array(pts).T
        return float(np.polyfit(n, t, 1)[0])

    def slope_rows(self):
        ests = sorted({e for e, *_ in self.rows})
        for e in ests:
            for h in sorted({hh for ee, _, hh, _, _ in self.rows if ee == e}):
                if len({n for ee, n, hh, _, _ in self.rows if ee == e and hh == h}) > 1:
                    yield (e, h, self.slope(e, h))

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = sorted(self.rows)
        write_csv(out / "timing.csv", ["estimator", "N", "h", "median_seconds"],
                  [r[:4] for r in rows])
        write_csv(out / "timing_iterations.csv", ["estimator", "N", "h", "median_iterations"],
                  [(r[0], r[1], r[2], r[4]) for r in rows])
        write_dat(out / "timing.dat", ["estimator", "N", "h", "median_seconds"], [r[:4] for r in rows])
        lines = ["median fit wall time (s)", ""]
        lines += [f"{e:<4} N={n:<7d} h={h:<8g} {t:10.4f}  (median iterations {it:g})"
                  for e, n, h, t, it in rows]
        lines += ["", "slope in N (s per observation)"]
        lines += [f"{e:<4} h={h:<8g} {s:.4g}" for e, h, s in self.slope_rows()]
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
        return out


def run_timing_study(model, estimators, N_grid, h, M, seed, theta0=None, cfg=None, x0=None,
                     burn_in=DEFAULT_BURN_IN, fine_step=FINE_STEP, threads=1) -> TimingReport:
    """Median wall time of a full fit per estimator and sample size.

    ``h`` may be a single step or a list of steps. Data generation is not
    timed; each cell reuses prefixes of the same ``M`` trajectories.
    """
    hs = [float(v) for v in np.atleast_1d(h)]
    report = run_are_study(model, estimators, hs, N_grid, M, seed, theta0=theta0, cfg=cfg, x0=x0,
                           burn_in=burn_in, fine_step=fine_step, threads=threads)
    rows = []
    for est, hh, N in report.cells():
        recs = [r for r in report.cell(est, hh, N) if r.theta_hat is not None]
        t = float(np.median([r.wall_time for r in recs])) if recs else float("nan")
        it = float(np.median([r.iterations for r in recs])) if recs else float("nan")
        rows.append((est, N, hh, t, it))
    return TimingReport(rows)


# ---------------------------------------------------------------------------
# asymptotic law


def _sigma_basis(d, mode):
    """Derivatives of ``ΣΣᵀ`` with respect to each diffusion parameter."""
    mats = []
    if mode == "diagonal":
        for j in range(d):
            E = np.zeros((d, d))
            E[j, j] = 1.0
            mats.append(E)
        return mats
    for j in range(d):
        for i in range(j + 1):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0
            mats.append(E)
    return mats


@dataclass
class AsymptoticLaw:
    """Limiting precision of the scaled estimators.

    ``√(Nh)(β̂ - β₀) → N(0, C_beta⁻¹)`` and ``√N(ς̂ - ς₀) → N(0, C_sigma⁻¹)``.
    """

    C_beta: np.ndarray
    C_sigma: np.ndarray
    param_names: tuple = ()

    @property
    def scaling(self):
        return ("sqrt(N h)", "sqrt(N)")

    def sd_scaled(self):
        """Standard deviations of the scaled deviations, per parameter."""
        return np.concatenate([np.sqrt(np.diag(np.linalg.inv(self.C_beta))),
                               np.sqrt(np.diag(np.linalg.inv(self.C_sigma)))])

    def scale_factors(self, N, h):
        r = self.C_beta.shape[0]
        s = self.C_sigma.shape[0]
        return np.concatenate([np.full(r, np.sqrt(N * h)), np.full(s, np.sqrt(N))])

    def sd(self, N, h):
        """Predicted standard deviation of ``θ̂`` itself at sample size N, step h."""
        return self.sd_scaled() / self.scale_factors(N, h)


def compute_asymptotic_law(model, theta0, data) -> AsymptoticLaw:
    """Estimate ``C(θ₀)`` by averaging over observed states.

    ``C_beta = E[(∂_β F)ᵀ (ΣΣᵀ)⁻¹ ∂_β F]`` with the expectation replaced by the
    mean over all states in ``data``, and
    ``C_sigma[j, k] = ½ tr(∂_j ΣΣᵀ (ΣΣᵀ)⁻¹ ∂_k ΣΣᵀ (ΣΣᵀ)⁻¹)``.

    Parameters
    ----------
    data : Trajectory, sequence of Trajectory, or array of states ``(..., d)``
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    if isinstance(data, Trajectory):
        states = data.states
    elif isinstance(data, (list, tuple)) and data and isinstance(data[0], Trajectory):
        states = np.concatenate([t.states for t in data])
    else:
        states = np.asarray(data, dtype=float)
    states = states.reshape(-1, model.dim) if states.size else states
    if states.size == 0:
        raise ContractViolation("cannot estimate the asymptotic law from an empty pool")
    S = theta0.sigma_matrix()
    Sinv = np.linalg.inv(S)
    G = model.drift_beta_jacobian(states, theta0.beta)  # (n, d, r)
    C_beta = np.einsum("nir,ij,njs->rs", G, Sinv, G) / states.shape[0]
    basis = _sigma_basis(model.dim, theta0.mode)
    k = len(basis)
    C_sigma = np.empty((k, k))
    for a in range(k):
        for b in range(k):
            C_sigma[a, b] = 0.5 * np.trace(basis[a] @ Sinv @ basis[b] @ Sinv)
    return AsymptoticLaw(0.5 * (C_beta + C_beta.T), C_sigma, tuple(model.param_names))


# ---------------------------------------------------------------------------
# normality


def trimmed(values, fraction=0.01):
    """Drop ``floor(n·fraction/2)`` observations from each tail."""
    v = np.sort(np.asarray(values, dtype=float))
    k = int(math.floor(v.size * fraction / 2))
    return (v[k:v.size - k] if k else v), 2 * k


@dataclass
class NormalityReport:
    rows: list  # (estimator, N, h, param, stat, mean, sd, se_mean, theory_sd, sd_ratio, n_used, n_trimmed)
    law: AsymptoticLaw
    source: MonteCarloReport

    def get(self, estimator, N, param, stat="raw"):
        for row in self.rows:
            if row[0] == estimator and row[1] == N and row[3] == param and row[4] == stat:
                return dict(zip(NORMALITY_HEADER, row))
        raise KeyError((estimator, N, param, stat))

    def write(self, out_dir):
        out = Path(out_dir)
        self.source.write(out)
        write_csv(out / "normality.csv", NORMALITY_HEADER, self.rows)
        write_dat(out / "normality.dat", NORMALITY_HEADER, self.rows)
        lines = ["scaled deviations vs. asymptotic law (sd_ratio = empirical sd / theory sd)", ""]
        for r in self.rows:
            lines.append(f"{r[0]:<3} N={r[1]:<6d} h={r[2]:<7g} {r[3]:<10} {r[4]:<8} mean={r[5]:+.3f} "
                         f"sd={r[6]:.3f} theory={r[8]:.3f} ratio={r[9]:.3f} n={r[10]} trimmed={r[11]}")
        with (out / "summary.txt").open("a") as fh:
            fh.write("\n" + "\n".join(lines) + "\n")
        return out


NORMALITY_HEADER = ["estimator", "N", "h", "param", "stat", "mean", "sd", "se_mean",
                    "theory_sd", "sd_ratio", "n_used", "n_trimmed"]


def normality_from_report(report: MonteCarloReport, model, theta0, law: AsymptoticLaw,
                          trim_fraction=0.01) -> NormalityReport:
    """Compare scaled deviations of every cell with the asymptotic law."""
    model = _resolve_model(model)
    theory = law.sd_scaled()
    rows = []
    for est, h, N in report.cells():
        dev = report.deviations(est, h, N) * law.scale_factors(N, h)
        for j, name in enumerate(report.param_names):
            col = dev[:, j]
            for stat, vals, ntrim in (("raw", col, 0), ("trimmed",) + trimmed(col, trim_fraction)):
                n = vals.size
                mean = float(vals.mean()) if n else float("nan")
                sd = float(vals.std(ddof=1)) if n > 1 else float("nan")
                rows.append((est, N, h, name, stat, mean, sd, sd / np.sqrt(n) if n > 1 else float("nan"),
                             float(theory[j]), sd / float(theory[j]), n, ntrim))
    return NormalityReport(rows, law, report)


def run_normality_study(model, theta0, estimator, N_grid, h, M, seed, cfg=None, x0=None,
                        burn_in=DEFAULT_BURN_IN, fine_step=FINE_STEP, trim_fraction=0.01,
                        threads=1, law_pool=None) -> NormalityReport:
    """Empirical distribution of scaled deviations against ``N(0, C⁻¹)``.

    The law is estimated from ``law_pool`` when given, otherwise from a
    separate stationary path (stream ``STREAM_STRIDE - 1`` of the last cell)
    of length ``20·max(N_grid)``.
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    ests = [estimator] if isinstance(estimator, str) else list(estimator)
    report = run_are_study(model, ests, [h], N_grid, M, seed, theta0=theta0, cfg=cfg, x0=x0,
                           burn_in=burn_in, fine_step=fine_step, threads=threads)
    if law_pool is None:
        n_pool = 20 * int(max(np.atleast_1d(N_grid)))
        law_pool = simulate_em_fine_batch(model, theta0, _default_x0(model, x0), h, n_pool,
                                          oversample_for(h, fine_step), seed,
                                          [STREAM_STRIDE - 1], burn_in)[0]
    law = compute_asymptotic_law(model, theta0, law_pool)
    return normality_from_report(report, model, theta0, law, trim_fraction)


# ---------------------------------------------------------------------------
# convergence orders


@dataclass
class ConvergenceReport:
    """Error tables and log-log slopes for the scheme convergence study."""

    errors: list  # (scheme, metric, h, error)
    slopes: list  # (scheme, metric, slope, r2)

    def slope(self, scheme, metric):
        for s, m, v, _ in self.slopes:
            if (s, m) == (scheme, metric):
                return v
        raise KeyError((scheme, metric))

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "slopes.csv", ["scheme", "metric", "slope", "r2"], self.slopes)
        write_csv(out / "errors.csv", ["scheme", "metric", "h", "error"], self.errors)
        write_dat(out / "errors.dat", ["scheme", "metric", "h", "error"], self.errors)
        lines = ["log-log slopes of error against h", ""]
        lines += [f"{s:<4} {m:<22} slope={v:.3f}  r2={r2:.4f}" for s, m, v, r2 in self.slopes]
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
        return out


def attractor_points(model, theta0, n_points, seed, h=0.01, spacing=50, burn_in=DEFAULT_BURN_IN,
                     x0=None):
    """States on a simulated path, ``spacing`` observations apart."""
    x0 = _default_x0(model, x0)
    path = simulate_em_fine_batch(model, theta0, x0, h, spacing * n_points, 10, seed,
                                  [STREAM_STRIDE - 2], burn_in)[0]
    return path[spacing::spacing][:n_points]


def _scheme_mean_gh(model, theta0, x, h, scheme, nodes):
    """``E[X_h]`` of one LT/S/EM step from ``x`` by tensor Gauss-Hermite quadrature."""
    beta = theta0.beta
    S = theta0.sigma_matrix()
    if scheme == "EM":
        return x + h * model.F(x, beta)
    A = model.A(beta)
    E = expm(A * h)
    if scheme == "LT":
        return model.nonlinear_flow(x, h, beta) @ E.T
    d = model.dim
    z, w = hermegauss(nodes)
    w = w / w.sum()
    grid = np.stack(np.meshgrid(*([z] * d), indexing="ij"), -1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), -1).reshape(-1, d), axis=1)
    L = van_loan_omega(A, S, h).chol
    mu = model.nonlinear_flow(x, h / 2, beta) @ E.T
    pts = mu[..., None, :] + grid @ L.T
    return np.einsum("k,...kd->...d", wts, model.nonlinear_flow(pts, h / 2, beta))


def one_step_mean_errors(model, theta0, h_grid, points, schemes=("LT", "S"), order=14, nodes=12):
    """Conditional-mean error ``‖E[X^scheme_h | x] - E[X_h | x]‖`` averaged over ``points``.

    The exact conditional mean comes from the generator series (order
    ``order``), the scheme mean from Gauss-Hermite quadrature over the
    Gaussian innovation. Both are deterministic.
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    drift = polynomial_drift(model, theta0.beta)
    S = theta0.sigma_matrix()
    coords = [TrigPoly.var(i, model.dim) for i in range(model.dim)]
    x = np.asarray(points, dtype=float)
    out = {s: [] for s in schemes}
    for h in h_grid:
        exact = np.stack([expectation_series(g, drift, S, x, h, order) for g in coords], axis=-1)
        for s in schemes:
            err = np.linalg.norm(_scheme_mean_gh(model, theta0, x, h, s, nodes) - exact, axis=-1)
            out[s].append(float(np.mean(err)))
    return {s: np.array(v) for s, v in out.items()}


def moment_bounds(model, theta0, h_grid, points, method="series", order=14, n_samples=10_000,
                  seed=0, oversample=64):
    """Conditional moments of the Strang residual ``Z = f_{h/2}⁻¹(X_h) - μ_h(x)``.

    Returns ``(mean_norm, cov_err)`` arrays over ``h_grid``: the average over
    ``points`` of ``‖E[Z]‖`` and ``‖E[Z Zᵀ] - h ΣΣᵀ‖_F`` under the true
    transition.

    ``method="series"`` evaluates both expectations with the generator series
    (deterministic; needs ``model.flow_trigpoly``). ``method="monte_carlo"``
    draws ``n_samples`` fine Euler-Maruyama transitions per point; its
    sampling error is of order ``√(h / n_samples)``, far above the ``h³``
    signal of the mean, so it is only a rough cross-check.
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    beta = theta0.beta
    S = theta0.sigma_matrix()
    x = np.atleast_2d(np.asarray(points, dtype=float))
    d = model.dim
    mean_norm, cov_err = [], []
    for hi, h in enumerate(h_grid):
        E = expm(model.A(beta) * h)
        mu = model.nonlinear_flow(x, h / 2, beta) @ E.T
        if method == "series":
            drift = polynomial_drift(model, beta)
            g = model.flow_trigpoly(-h / 2, beta)
            EZ = np.stack([expectation_series(gi, drift, S, x, h, order) for gi in g], -1) - mu
            EZZ = np.empty((x.shape[0], d, d))
            for k in range(x.shape[0]):
                c = [gi - float(mu[k, i]) for i, gi in enumerate(g)]
                for a in range(d):
                    for b in range(a, d):
                        EZZ[k, a, b] = EZZ[k, b, a] = expectation_series(
                            c[a] * c[b], drift, S, x[k], h, order)
        elif method == "monte_carlo":
            EZ = np.empty_like(x)
            EZZ = np.empty((x.shape[0], d, d))
            for k in range(x.shape[0]):
                Z = _mc_one_step(model, theta0, x[k], h, n_samples, oversample, seed,
                                 hi * STREAM_STRIDE + k) - mu[k]
                EZ[k] = Z.mean(axis=0)
                EZZ[k] = Z.T @ Z / Z.shape[0]
        else:
            raise ContractViolation(f"unknown method {method!r}")
        mean_norm.append(float(np.mean(np.linalg.norm(EZ, axis=-1))))
        cov_err.append(float(np.mean(np.linalg.norm(EZZ - h * S, axis=(-2, -1)))))
    return np.array(mean_norm), np.array(cov_err)


def _mc_one_step(model, theta0, x, h, n, oversample, seed, stream):
    """``f_{h/2}⁻¹`` of ``n`` independent one-step fine-EM transitions from ``x``."""
    rng = make_rng(seed, stream)
    L = np.linalg.cholesky(theta0.sigma_matrix())
    dt = h / oversample
    y = np.tile(np.asarray(x, float), (n, 1))
    for _ in range(oversample):
        y = y + dt * model.F(y, theta0.beta) + np.sqrt(dt) * rng.standard_normal(y.shape) @ L.T
    return model.inverse_nonlinear_flow(y, h / 2, theta0.beta)


def strong_errors(model, theta0, h_grid, schemes=("EM", "LT", "S"), n_paths=2000, T=1.0,
                  ref_factor=64, seed=0, x0=None, reference="taylor15"):
    """Root-mean-square terminal error against a fine-step reference solution.

    All step sizes must divide the largest one, and ``T`` must be a multiple
    of it. The reference uses step ``δ = min(h_grid) / ref_factor``; every
    coarse scheme is driven by the same fine Brownian increments, aggregated
    per step.

    ``reference="taylor15"`` (default) integrates the reference with the
    order-1.5 strong Itô-Taylor scheme for additive noise,

        x + Fδ + ΣΔW + DF Σ ΔZ + ½ (DF F + ½ tr(ΣΣᵀ ∇²F)) δ²,

    with ``ΔZ = ∫∫ dW ds`` drawn jointly with ``ΔW``. ``reference="em"`` uses
    plain Euler-Maruyama, whose own error at ``δ`` can be comparable to the
    error of the S scheme at the smallest coarse step on Lorenz. The LT/S
    innovation ``∫ e^{A(h-s)} Σ dW(s)`` is approximated by weighting each
    fine increment with ``e^{A(h - s_mid)}``.

    Returns
    -------
    dict
        scheme -> array of RMS errors over ``h_grid``.
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    beta = theta0.beta
    d = model.dim
    hs = np.asarray(sorted(h_grid, reverse=True), dtype=float)
    h_max, h_min = hs[0], hs[-1]
    delta = h_min / ref_factor
    n_fine = int(round(h_max / delta))
    n_int = int(round(T / h_max))
    if abs(n_int * h_max - T) > 1e-9 * T:
        raise ContractViolation("T must be a multiple of the largest step")
    subs = [int(round(h_max / h)) for h in hs]
    if any(abs(k * h - h_max) > 1e-12 for k, h in zip(subs, hs)):
        raise ContractViolation("every step must divide the largest step")

    Lsig = np.linalg.cholesky(theta0.sigma_matrix())
    A = model.A(beta)
    levels = []
    for h, k in zip(hs, subs):
        m = n_fine // k
        mids = h - (np.arange(m) + 0.5) * delta
        W = np.stack([expm(A * t) @ Lsig for t in mids])  # (m, d, d)
        levels.append(dict(h=h, k=k, m=m, W=W, E=expm(A * h)))

    x0 = np.asarray(x0 if x0 is not None else
                    attractor_points(model, theta0, 1, seed)[0], dtype=float)
    if reference not in ("taylor15", "em"):
        raise ContractViolation(f"unknown reference integrator {reference!r}")
    rng = make_rng(seed, STREAM_STRIDE - 3)
    rng_z = make_rng(seed, STREAM_STRIDE - 4)
    SS = theta0.sigma_matrix()
    x_ref = np.tile(x0, (n_paths, 1))
    state = {(s, i): x_ref.copy() for s in schemes for i in range(len(levels))}
    sq = np.sqrt(delta)
    # the trace term vanishes whenever ΣΣᵀ only couples coordinates with affine drift
    quad_term = bool(np.any(np.einsum("jk,nijk->ni", SS, model.hessians_F(x0[None], beta))))
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(n_int):
            dW = sq * rng.standard_normal((n_paths, n_fine, d))
            noise = dW @ Lsig.T
            if reference == "em":
                for j in range(n_fine):
                    x_ref = x_ref + delta * model.F(x_ref, beta) + noise[:, j]
            else:
                dZ = 0.5 * delta * (dW + sq * rng_z.standard_normal(dW.shape) / np.sqrt(3.0))
                noise_z = dZ @ Lsig.T
                for j in range(n_fine):
                    Fx = model.F(x_ref, beta)
                    J = model.jacobian_F(x_ref, beta)
                    drift2 = np.einsum("nij,nj->ni", J, Fx + noise_z[:, j] / (0.5 * delta * delta))
                    if quad_term:
                        drift2 = drift2 + 0.5 * np.einsum("jk,nijk->ni", SS,
                                                          model.hessians_F(x_ref, beta))
                    x_ref = x_ref + delta * Fx + noise[:, j] + 0.5 * delta * delta * drift2
            if not np.all(np.isfinite(x_ref)):
                raise DivergenceError("fine reference path blew up", (it + 1) * n_fine)
            for i, lv in enumerate(levels):
                blocks = dW.reshape(n_paths, lv["k"], lv["m"], d)
                if "EM" in schemes:
                    inc = blocks.sum(axis=2) @ Lsig.T
                    x = state[("EM", i)]
                    for s in range(lv["k"]):
                        x = x + lv["h"] * model.F(x, beta) + inc[:, s]
                    state[("EM", i)] = x
                if "LT" in schemes or "S" in schemes:
                    xi = np.einsum("jab,nsjb->nsa", lv["W"], blocks)
                    for scheme in ("LT", "S"):
                        if scheme not in schemes:
                            continue
                        x = state[(scheme, i)]
                        for s in range(lv["k"]):
                            if scheme == "LT":
                                x = model.nonlinear_flow(x, lv["h"], beta) @ lv["E"].T + xi[:, s]
                            else:
                                y = model.nonlinear_flow(x, lv["h"] / 2, beta) @ lv["E"].T + xi[:, s]
                                x = model.nonlinear_flow(y, lv["h"] / 2, beta)
                        state[(scheme, i)] = x
    out = {}
    for s in schemes:
        errs = [np.sqrt(np.mean(np.sum((state[(s, i)] - x_ref) ** 2, axis=1)))
                for i in range(len(levels))]
        out[s] = np.array(errs)[np.argsort(np.argsort(-np.asarray(h_grid)))]
    return out


def deterministic_strang_errors(model, theta0, h_grid, T=1.0, x0=None, seed=0):
    """Global error of the noiseless Strang composition against an adaptive ODE solve."""
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    beta = theta0.beta
    x0 = np.asarray(x0 if x0 is not None else
                    attractor_points(model, theta0, 1, seed)[0], dtype=float)
    sol = solve_ivp(lambda t, y: model.F(y, beta), (0.0, T), x0, method="DOP853",
                    rtol=1e-13, atol=1e-13)
    ref = sol.y[:, -1]
    errs = []
    for h in h_grid:
        n = int(round(T / h))
        E = expm(model.A(beta) * h)
        x = x0.copy()
        for _ in range(n):
            x = model.nonlinear_flow(model.nonlinear_flow(x, h / 2, beta) @ E.T, h / 2, beta)
        errs.append(float(np.linalg.norm(x - ref)))
    return np.array(errs)


def run_convergence_study(model, theta0, scheme_grid, h_grid, seed, n_paths=2000, T=1.0,
                          ref_factor=64, n_points=4, order=14, nodes=12,
                          moment_h_grid=None) -> ConvergenceReport:
    """Strong and one-step orders of the EM/LT/S schemes, plus harness self-checks.

    Metrics written to the slope table:

    ``strong``
        RMS terminal error at time ``T`` (all schemes in ``scheme_grid``).
    ``one_step_mean``
        Conditional-mean error of a single step, averaged over ``n_points``
        states on the attractor.
    ``deterministic_global``
        Noiseless Strang composition against an adaptive ODE solution (S only).
    ``moment_mean`` / ``moment_cov``
        ``‖E[Z]‖`` and ``‖E[ZZᵀ] - hΣΣᵀ‖`` of the Strang residual (S only,
        models exposing ``flow_trigpoly``).
    """
    model = _resolve_model(model)
    theta0 = _resolve_theta(model, theta0)
    schemes = [s.upper() for s in scheme_grid]
    bad = [s for s in schemes if s not in ("EM", "LT", "S")]
    if bad:
        raise ContractViolation(f"unknown schemes {bad}")
    hs = np.asarray(h_grid, dtype=float)
    errors, slopes = [], []

    def add(scheme, metric, hh, err):
        for h, e in zip(hh, err):
            errors.append((scheme, metric, float(h), float(e)))
        slopes.append((scheme, metric) + loglog_slope(hh, err))

    strong = strong_errors(model, theta0, hs, schemes, n_paths, T, ref_factor, seed)
    for s in schemes:
        add(s, "strong", hs, strong[s])

    pts = attractor_points(model, theta0, n_points, seed)
    if hasattr(model, "drift_polynomials"):
        one = one_step_mean_errors(model, theta0, hs, pts, schemes, order, nodes)
        for s in schemes:
            add(s, "one_step_mean", hs, one[s])
    if "S" in schemes:
        add("S", "deterministic_global", hs,
            deterministic_strang_errors(model, ParameterVector(theta0.beta, 0 * theta0.sigma_param,
                                                               theta0.mode), hs, T, seed=seed))
        if hasattr(model, "flow_trigpoly"):
            mh = hs if moment_h_grid is None else np.asarray(moment_h_grid, float)
            mean_norm, cov_err = moment_bounds(model, theta0, mh, pts, "series", order)
            add("S", "moment_mean", mh, mean_norm)
            add("S", "moment_cov", mh, cov_err)
    errors.sort()
    slopes.sort()
    return ConvergenceReport(errors, slopes)
