"""Command-line entry point: ``icbar {simulate,fit,select,gridsearch,bench}``."""

import argparse
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data as dio
from . import emcore, harness, simgen, solver
from .errors import IcbarError, NumericalError
from .penalty import penalty_from_name

log = logging.getLogger("icbar")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _writer(fh, fmt):
    return csv.writer(fh, delimiter=harness.DELIMITERS[fmt], lineterminator="\n")


def _num(x, digits=6):
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.{digits}f}"


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _load(args):
    return dio.load_dataset(args.data, companion=args.companion)


def _specs(args):
    r = args.r if args.r is not None else [args.r1, args.r2]
    if any(v < 0 for v in r):
        raise UsageError("transformation parameters must be >= 0")
    return tuple(float(v) for v in r)


def _penalty(args):
    if args.penalty is None:
        return None
    kw = {}
    if args.penalty == "bar":
        kw["delta"] = args.delta
    elif args.penalty == "alasso":
        kw["psi"] = args.psi
    return penalty_from_name(args.penalty, **kw)


def _fit_config(args):
    return solver.FitConfig(outer_tol=args.tol, max_outer=args.max_iter, zero_threshold=args.zero_threshold)


def _tau_grid(args, n):
    if args.tau_grid:
        return np.array([float(v) for v in args.tau_grid.split(",")])
    return solver.default_tau_grid(n, args.tau_count)


def fit_report(problem, fit, fmt="csv", extra=()):
    """``#`` meta lines followed by a ``risk,covariate,estimate,zero`` table."""
    buf = io.StringIO()
    buf.write(f"# r: {','.join(f'{v:g}' for v in problem.r)}\n")
    buf.write(f"# penalty: {fit.penalty}\n")
    buf.write(f"# tau: {fit.tau:g}\n")
    buf.write(f"# n: {problem.n}\n")
    buf.write(f"# loglik: {fit.loglik_observed:.6f}\n")
    buf.write(f"# iterations: {fit.iterations}\n")
    for line in extra:
        buf.write(f"# {line}\n")
    w = _writer(buf, fmt)
    w.writerow(["risk", "covariate", "estimate", "zero"])
    for k in range(problem.K):
        for j in range(problem.d):
            b = float(fit.beta_hat[k, j])
            w.writerow([k + 1, f"z{j + 1}", _num(b), int(b == 0.0)])
    return buf.getvalue()


def cmd_simulate(args):
    scenario, bench = harness.load_config(args.config)
    if args.seed is not None:
        scenario.seed = args.seed
    reps = args.reps if args.reps is not None else bench.reps
    os.makedirs(args.out, exist_ok=True)
    delim = harness.DELIMITERS[args.format]
    for rep in range(bench.first_rep, bench.first_rep + reps):
        ds = simgen.gen_dataset(scenario, rep)
        dio.write_dataset(ds, os.path.join(args.out, f"rep_{rep:04d}.{args.format}"), delimiter=delim)
    log.info("wrote %d datasets to %s", reps, args.out)
    return EXIT_OK


def cmd_fit(args):
    if args.tune and args.tau is not None:
        raise UsageError("--tau and --tune are mutually exclusive")
    if (args.tune or args.tau is not None) and args.penalty is None:
        raise UsageError("--tau/--tune need --penalty")
    if args.penalty is not None and not args.tune and args.tau is None:
        raise UsageError("--penalty needs --tau or --tune")
    problem = emcore.Problem(_load(args), _specs(args))
    cfg = _fit_config(args)
    extra = []
    if args.penalty is None or (args.tau is not None and args.tau == 0):
        # no penalty at tau = 0: this is the unpenalized fit
        fit = solver.fit_unpenalized(problem, config=cfg)
    else:
        pen = _penalty(args)
        init = solver.initial_estimate(problem, config=cfg)
        if args.tune:
            _, fit, _ = solver.select_tau(problem, penalty=pen, tau_grid=_tau_grid(args, problem.n), config=cfg,
                                          init=init, gcv_loss=args.gcv_loss)
            extra.append(f"gcv: {fit.gcv:.6f}")
        else:
            if args.tau < 0:
                raise UsageError("--tau must be >= 0")
            fit = solver.fit_penalized(problem, config=cfg.replace(penalty=pen, tau=args.tau), init=init)
    _emit(fit_report(problem, fit, args.format, extra), args.out)
    return EXIT_OK


def cmd_select(args):
    problem = emcore.Problem(_load(args), _specs(args))
    pen = _penalty(args)
    cfg = _fit_config(args)
    tau_star, fit, table = solver.select_tau(problem, penalty=pen, tau_grid=_tau_grid(args, problem.n),
                                             config=cfg, gcv_loss=args.gcv_loss)
    buf = io.StringIO()
    buf.write(f"# penalty: {fit.penalty}\n# tau_star: {tau_star:.6g}\n")
    w = _writer(buf, args.format)
    w.writerow(["tau", "gcv", "n_nonzero", "converged", "iterations"])
    for row in table:
        w.writerow([f"{row.tau:.6g}", _num(row.gcv), row.n_nonzero, int(row.converged), row.iterations])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_gridsearch(args):
    ds = _load(args)
    K = args.risks
    pairs = solver.r_grid(args.rmax, args.rstep, K)
    cfg = _fit_config(args)
    fail = None
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            try:
                best, table = solver.select_transformation(ds, pairs, cfg, map_rows=pool.map)
            except NumericalError as exc:
                best, table, fail = None, getattr(exc, "table", []), exc
    else:
        try:
            best, table = solver.select_transformation(ds, pairs, cfg)
        except NumericalError as exc:
            best, table, fail = None, getattr(exc, "table", []), exc
    buf = io.StringIO()
    if best is not None:
        buf.write(f"# best: {','.join(f'{v:g}' for v in best)}\n")
    w = _writer(buf, args.format)
    w.writerow([*[f"r{k + 1}" for k in range(K)], "loglik", "converged"])
    for c in table:
        w.writerow([*[f"{v:g}" for v in c.r], _num(c.loglik), int(c.converged)])
    _emit(buf.getvalue(), args.out)
    if fail is not None:
        raise fail
    return EXIT_OK


def cmd_bench(args):
    scenario, settings = harness.load_config(args.config)
    if args.seed is not None:
        scenario.seed = args.seed
    if args.reps is not None:
        if args.reps < 1:
            raise UsageError("--reps must be >= 1")
        settings.reps = args.reps
    rows, _ = harness.run_bench(scenario, settings, parallelism=args.threads, out=args.out, fmt=args.format)
    sys.stdout.write(harness.format_summary(rows, args.format))
    return EXIT_OK


def _add_data_args(p, r=True):
    p.add_argument("--data", required=True, help="subject file (CSV or TSV)")
    p.add_argument("--companion", help="time-varying covariate file")
    if r:
        p.add_argument("--r1", type=float, default=0.0)
        p.add_argument("--r2", type=float, default=0.0)
        p.add_argument("--r", type=float, nargs="+", help="one transformation parameter per risk")


def _add_fit_args(p):
    p.add_argument("--tol", type=float, default=1e-6, help="outer convergence tolerance")
    p.add_argument("--max-iter", type=int, default=5000, help="maximum EM cycles")
    p.add_argument("--zero-threshold", type=float, default=1e-5)


def _add_penalty_args(p, required):
    p.add_argument("--penalty", choices=["bar", "lasso", "alasso"], required=required)
    p.add_argument("--delta", type=float, default=1e-6, help="BAR stabiliser")
    p.add_argument("--psi", type=float, default=1.0, help="adaptive lasso weight exponent")
    p.add_argument("--tau-grid", help="comma-separated tau values")
    p.add_argument("--tau-count", type=int, default=20, help="size of the default tau grid")
    p.add_argument("--gcv-loss", choices=["profile", "observed"], default="profile")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--format", choices=["csv", "tsv"], default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="icbar", parents=[common],
                                 description="Penalized transformation models for interval-censored competing risks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write simulated datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--reps", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit one model")
    _add_data_args(p)
    _add_fit_args(p)
    _add_penalty_args(p, required=False)
    p.add_argument("--tau", type=float)
    p.add_argument("--tune", action="store_true", help="choose tau by GCV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", parents=[common], help="GCV table over a tau grid")
    _add_data_args(p)
    _add_fit_args(p)
    _add_penalty_args(p, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("gridsearch", parents=[common], help="log-likelihood over a grid of transformations")
    _add_data_args(p, r=False)
    _add_fit_args(p)
    p.add_argument("--rmax", type=float, default=3.0)
    p.add_argument("--rstep", type=float, default=0.2)
    p.add_argument("--risks", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("bench", parents=[common], help="Monte Carlo benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="directory for summary and detail tables")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args.seed = getattr(args, "seed", None)
    args.threads = getattr(args, "threads", 1)
    args.format = getattr(args, "format", "csv")
    level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(args, "verbose", 0), logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("icbar: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"icbar: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, IcbarError, ValueError, OSError, ImportError) as exc:
        print(f"icbar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # yaml parse errors and the like
        if type(exc).__module__.startswith("yaml"):
            print(f"icbar: error: bad config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
