"""Command-line front end: ``splitsde simulate | fit | study``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import ConfigError, ContractViolation, DivergenceError, InitializationError
from .experiments import (default_threads, oversample_for, run_are_study, run_convergence_study,
                          run_normality_study, run_timing_study)
from .models import get_model
from .objectives import make_objective
from .optimize import fit, softplus_inverse
from .simulate import Trajectory, simulate_em_fine

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() controls exit codes."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--model", help="model id (lorenz, ou, or a registered model)")
    p.add_argument("--theta0", help="comma-separated true parameter (model default if omitted)")
    p.add_argument("--seed", help="base random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", help="worker processes (default: logical cores)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. --set opt.max_iters=300")


def build_parser():
    ap = _Parser(prog="splitsde", description="Splitting-scheme estimators for SDEs with additive noise.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a trajectory with fine-grid Euler-Maruyama")
    _add_common(p)
    p.add_argument("--n", dest="N", help="number of transitions")
    p.add_argument("--h", help="observation step")
    p.add_argument("--oversample", help="fine steps per observation step")
    p.add_argument("--burn-in", dest="burn_in", help="model time discarded before the first observation")
    p.add_argument("--x0", help="comma-separated initial state")

    p = sub.add_parser("fit", help="fit estimators to a trajectory CSV")
    _add_common(p)
    p.add_argument("trajectory", help="CSV with header t,x1,...,xd")
    p.add_argument("--estimators", help="comma-separated subset of em,k2,ll,lt,s")
    p.add_argument("--init", help="'default' (all raw parameters 0.1) or 'theta0'")

    p = sub.add_parser("study", help="run a Monte Carlo or convergence study")
    _add_common(p)
    p.add_argument("study", choices=config_mod.STUDIES)
    p.add_argument("--preset", help="desk or paper")
    p.add_argument("--estimators")
    p.add_argument("--schemes")
    p.add_argument("--n", dest="N", help="sample size(s)")
    p.add_argument("--h", help="step size(s)")
    p.add_argument("--M", "--m", dest="M", help="repetitions per cell")
    p.add_argument("--oversample")
    p.add_argument("--burn-in", dest="burn_in")
    p.add_argument("--x0")
    p.add_argument("--init")
    p.add_argument("--n-paths", dest="n_paths")
    return ap


_FLAG_FIELDS = ("model", "theta0", "seed", "out", "threads", "N", "h", "oversample", "burn_in",
                "x0", "estimators", "schemes", "M", "init", "n_paths", "preset")


def _resolve(args):
    overrides = {k: getattr(args, k) for k in _FLAG_FIELDS if getattr(args, k, None) is not None}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    text, source = None, "<config>"
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        source = str(path)
    return config_mod.resolve(text, overrides, source, study=getattr(args, "study", None))


def _theta(model, cfg):
    if cfg.theta0 is None:
        return model.default_theta
    try:
        return model.make_theta(np.array(cfg.theta0))
    except ContractViolation as exc:
        raise ConfigError(f"theta0: {exc}") from None


def _model(cfg):
    try:
        return get_model(cfg.model)
    except ContractViolation as exc:
        raise ConfigError(f"model: {exc}") from None


def _prepare_out(cfg):
    out = Path(cfg.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    return out


def cmd_simulate(cfg) -> int:
    model = _model(cfg)
    theta0 = _theta(model, cfg)
    h = cfg.h[0]
    N = cfg.N[0]
    oversample = cfg.oversample or oversample_for(h, cfg.fine_step)
    x0 = np.array(cfg.x0) if cfg.x0 is not None else np.ones(model.dim)
    if x0.shape != (model.dim,):
        raise ConfigError(f"x0: expected {model.dim} values")
    out = _prepare_out(cfg)
    traj = simulate_em_fine(model, theta0, x0, h, N, oversample, cfg.seed, 0, cfg.burn_in)
    traj.to_csv(out / "trajectory.csv")
    manifest = {
        "model": model.name,
        "theta0": dict(zip(model.param_names, map(float, theta0.flat))),
        "seed": cfg.seed,
        "stream": 0,
        "h": h,
        "N": N,
        "oversample": oversample,
        "fine_step": h / oversample,
        "burn_in": cfg.burn_in,
        "x0": [float(v) for v in x0],
        "generator": "euler_maruyama_subsampled",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'trajectory.csv'} ({N + 1} states, h={h:g}, fine step {h / oversample:g})")
    return EXIT_OK


def cmd_fit(cfg, trajectory) -> int:
    model = _model(cfg)
    try:
        traj = Trajectory.from_csv(trajectory)
    except ContractViolation as exc:
        raise ConfigError(f"{trajectory}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{trajectory}: cannot read ({exc.strerror})") from None
    if traj.dim != model.dim:
        raise ConfigError(f"{trajectory}: {traj.dim} state columns, model {model.name!r} has dimension "
                          f"{model.dim}")
    opt = cfg.optimizer_config()
    init = None
    if cfg.init == "theta0":
        th = _theta(model, cfg).flat
        init = np.where(model.positive_mask, softplus_inverse(np.where(model.positive_mask, th, 1.0)), th)
    records = []
    for est in cfg.estimators:
        obj = make_objective(est, model, traj)
        try:
            res = fit(obj, opt, init=init)
            rec = res.as_record(estimator=est, model=model.name, N=traj.N, h=traj.h)
        except (InitializationError, ContractViolation) as exc:
            rec = {"estimator": est, "model": model.name, "N": traj.N, "h": traj.h,
                   "theta_hat": None, "objective": None, "iterations": 0, "converged": False,
                   "wall_time": 0.0, "failure_reason": str(exc)}
        records.append(rec)
    lines = [json.dumps(r, sort_keys=False) for r in records]
    print("\n".join(lines))
    if cfg.out:
        out = _prepare_out(cfg)
        (out / "fits.jsonl").write_text("\n".join(lines) + "\n")
    if all(r["theta_hat"] is None for r in records):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_study(cfg) -> int:
    if cfg.study is None:
        raise ConfigError("study: no study selected")
    model = _model(cfg)
    theta0 = _theta(model, cfg)
    threads = cfg.threads or default_threads()
    out = _prepare_out(cfg)
    opt = cfg.optimizer_config()
    x0 = np.array(cfg.x0) if cfg.x0 is not None else None
    common = dict(theta0=theta0, cfg=opt, x0=x0, burn_in=cfg.burn_in, fine_step=cfg.fine_step,
                  threads=threads)
    t0 = time.perf_counter()
    if cfg.study == "are":
        report = run_are_study(model, cfg.estimators, cfg.h, cfg.N, cfg.M, cfg.seed,
                               init=None if cfg.init == "default" else cfg.init, **common)
    elif cfg.study == "timing":
        report = run_timing_study(model, cfg.estimators, cfg.N, cfg.h, cfg.M, cfg.seed, **common)
    elif cfg.study == "normality":
        report = run_normality_study(model, theta0, cfg.estimators, cfg.N, cfg.h[0], cfg.M, cfg.seed,
                                     cfg=opt, x0=x0, burn_in=cfg.burn_in, fine_step=cfg.fine_step,
                                     trim_fraction=cfg.trim_fraction, threads=threads)
    else:
        report = run_convergence_study(model, theta0, cfg.schemes, cfg.h, cfg.seed,
                                       n_paths=cfg.n_paths, T=cfg.T, ref_factor=cfg.ref_factor)
    report.write(out)
    with (out / "summary.txt").open("a") as fh:
        fh.write(f"\nstudy {cfg.study} finished in {time.perf_counter() - t0:.1f} s "
                 f"with {threads} worker(s)\n")
    print((out / "summary.txt").read_text(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        cfg = _resolve(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.trajectory)
        return cmd_study(cfg)
    except ConfigError as exc:
        print(f"splitsde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, ContractViolation, RuntimeError, OSError) as exc:
        print(f"splitsde: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
