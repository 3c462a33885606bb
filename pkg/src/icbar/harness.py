"""Monte Carlo benchmark: simulate replications, tune and fit every penalty,
and reduce to TP / FP / MCV / MMSE summaries."""

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import emcore, simgen, solver
from .errors import IcbarError, NumericalError, ValidationError
from .penalty import penalty_from_name

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ["penalty", "n", "p", "rho", "r1", "r2", "TP", "FP", "MCV", "MMSE", "MSE_SD", "reps", "failures"]
DETAIL_FIELDS = ["rep", "penalty", "tau_star", "tp", "fp", "mcv", "mse", "iters", "converged"]
PENALTY_ORDER = ("LASSO", "ALASSO", "BAR", "Oracle")
DELIMITERS = {"csv": ",", "tsv": "\t"}


def replication_metrics(beta_hat, beta_true, sigma_per_risk, zero_threshold=1e-5):
    """``(tp, fp, mcv, mse)`` for one estimate.

    ``sigma_per_risk`` is one covariance matrix per risk, or a single matrix
    shared by all risks.
    """
    b = np.atleast_2d(np.asarray(beta_hat, dtype=float))
    t = np.atleast_2d(np.asarray(beta_true, dtype=float))
    if b.shape != t.shape:
        raise ValueError(f"shape mismatch: {b.shape} vs {t.shape}")
    sig = np.asarray(sigma_per_risk, dtype=float)
    if sig.ndim == 2:
        sig = np.broadcast_to(sig, (t.shape[0],) + sig.shape)
    nonzero = np.abs(b) > zero_threshold
    truth = t != 0
    tp = int(np.sum(nonzero & truth))
    fp = int(np.sum(nonzero & ~truth))
    mcv = int(truth.sum()) - tp + fp
    diff = b - t
    mse = float(sum(dk @ sk @ dk for dk, sk in zip(diff, sig)))
    return tp, fp, mcv, mse


@dataclass
class ReplicationRecord:
    rep: int
    penalty: str
    tau_star: float | None
    tp: int | None
    fp: int | None
    mcv: int | None
    mse: float | None
    iters: int
    converged: bool
    max_residual: float | None = None
    error: str = ""


@dataclass
class MetricsRow:
    penalty: str
    n: int
    p: int
    q: int
    rho: float
    r: tuple
    TP: float
    FP: float
    MCV: float
    MMSE: float
    MSE_SD: float
    reps: int
    failures: int

    def cells(self):
        r1 = self.r[0]
        r2 = self.r[1] if len(self.r) > 1 else ""
        return [self.penalty, self.n, self.p, _fmt(self.rho), _fmt(r1), _fmt(r2), _fmt(self.TP, 2),
                _fmt(self.FP, 2), _fmt(self.MCV, 2), _fmt(self.MMSE, 3), _fmt(self.MSE_SD, 3),
                self.reps, self.failures]


def _fmt(x, digits=None):
    if x == "" or x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if digits is None:
        return f"{x:g}"
    return f"{x:.{digits}f}"


@dataclass
class BenchSettings:
    reps: int = 50
    penalties: tuple = ("BAR", "LASSO", "ALASSO", "Oracle")
    tau_grid: list | dict | None = None
    first_rep: int = 0
    fit: dict = field(default_factory=dict)
    gcv_loss: str = "profile"

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError("reps must be >= 1")
        names = []
        for p in self.penalties:
            label = {"bar": "BAR", "lasso": "LASSO", "alasso": "ALASSO", "oracle": "Oracle"}.get(str(p).lower())
            if label is None:
                raise ValidationError(f"unknown penalty {p!r}")
            names.append(label)
        self.penalties = tuple(names)
        unknown = set(self.fit) - {f.name for f in fields(solver.FitConfig)} - {"delta", "psi"}
        if unknown:
            raise ValidationError(f"unknown fit options: {sorted(unknown)}")

    def fit_config(self):
        opts = {k: v for k, v in self.fit.items() if k not in ("delta", "psi")}
        return solver.FitConfig(**opts)

    def penalty(self, label):
        if label == "BAR":
            return penalty_from_name("bar", delta=float(self.fit.get("delta", 1e-6)))
        if label == "ALASSO":
            return penalty_from_name("alasso", psi=float(self.fit.get("psi", 1.0)))
        return penalty_from_name(label)

    def grid(self, n):
        g = self.tau_grid
        if g is None:
            return solver.default_tau_grid(n)
        if isinstance(g, dict):
            unknown = set(g) - {"size", "low", "high"}
            if unknown:
                raise ValidationError(f"unknown tau_grid keys: {sorted(unknown)}")
            return solver.default_tau_grid(n, int(g.get("size", 20)), float(g.get("low", 1e-2)),
                                           float(g.get("high", 1e2)))
        return np.asarray(g, dtype=float)


def run_replication(scenario, rep, settings):
    """All penalties on replication ``rep``; one record per penalty."""
    data = simgen.gen_dataset(scenario, rep)
    problem = emcore.Problem(data, scenario.specs)
    cfg = settings.fit_config()
    sigma = scenario.population_covariance()
    thr = cfg.zero_threshold
    out = []
    init, init_err = None, ""
    if any(p != "Oracle" for p in settings.penalties):
        try:
            init = solver.initial_estimate(problem, config=cfg)
        except IcbarError as exc:
            init_err = f"initial fit: {type(exc).__name__}: {exc}"
    for label in settings.penalties:
        try:
            if label == "Oracle":
                fit = solver.oracle_fit(problem, true_support=scenario.true_support, config=cfg)
                tau, resid = None, None
            else:
                if init is None:
                    raise NumericalError(init_err)
                tau, fit, table = solver.select_tau(problem, penalty=settings.penalty(label),
                                                    tau_grid=settings.grid(problem.n), config=cfg, init=init,
                                                    gcv_loss=settings.gcv_loss)
                res = [row.residual for row in table if row.residual is not None]
                resid = max(res) if res else None
            tp, fp, mcv, mse = replication_metrics(fit.beta_hat, scenario.beta_true, sigma, thr)
            out.append(ReplicationRecord(rep, label, tau, tp, fp, mcv, mse, fit.iterations, True, resid))
        except IcbarError as exc:
            log.warning("replication %d, %s failed: %s", rep, label, exc)
            out.append(ReplicationRecord(rep, label, None, None, None, None, None, 0, False, None,
                                         f"{type(exc).__name__}: {exc}"))
    return out


def _replication_task(args):
    scenario_dict, rep, settings = args
    return run_replication(simgen.Scenario.from_dict(scenario_dict), rep, settings)


def summarize(scenario, records, penalties):
    """One :class:`MetricsRow` per penalty, in table order."""
    rows = []
    order = [p for p in PENALTY_ORDER if p in penalties]
    for label in order:
        recs = [r for r in records if r.penalty == label]
        ok = [r for r in recs if r.converged]
        mses = np.array([r.mse for r in ok], dtype=float)
        mean = (lambda a: float(np.mean(a)) if len(a) else math.nan)
        rows.append(MetricsRow(
            penalty=label,
            n=scenario.n,
            p=scenario.p,
            q=scenario.q,
            rho=scenario.rho,
            r=scenario.r,
            TP=mean([r.tp for r in ok]),
            FP=mean([r.fp for r in ok]),
            MCV=mean([r.mcv for r in ok]),
            MMSE=float(np.median(mses)) if mses.size else math.nan,
            MSE_SD=float(np.std(mses, ddof=1)) if mses.size > 1 else (0.0 if mses.size else math.nan),
            reps=len(recs),
            failures=len(recs) - len(ok),
        ))
    return rows


def run_bench(scenario, settings=None, parallelism=1, out=None, fmt="csv"):
    """Run ``settings.reps`` replications and summarise.

    Replications are independent (keyed random streams), so the output does
    not depend on ``parallelism``. Returns ``(rows, records)``; with ``out``
    the summary and detail tables are written there as well. Raises
    :class:`NumericalError` if more than half of the replications of any
    penalty fail (after writing the tables).
    """
    settings = settings or BenchSettings()
    reps = range(settings.first_rep, settings.first_rep + settings.reps)
    if parallelism > 1:
        payload = [(scenario.to_dict(), rep, settings) for rep in reps]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            batches = list(pool.map(_replication_task, payload))
    else:
        batches = [run_replication(scenario, rep, settings) for rep in reps]
    records = sorted((r for batch in batches for r in batch),
                     key=lambda r: (r.rep, PENALTY_ORDER.index(r.penalty)))
    rows = summarize(scenario, records, settings.penalties)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        ext = "tsv" if fmt == "tsv" else "csv"
        with open(os.path.join(out, f"summary.{ext}"), "w", encoding="utf-8", newline="") as fh:
            fh.write(format_summary(rows, fmt))
        with open(os.path.join(out, f"detail.{ext}"), "w", encoding="utf-8", newline="") as fh:
            fh.write(format_detail(records, fmt))
    bad = [row.penalty for row in rows if row.failures * 2 > row.reps]
    if bad:
        raise NumericalError(f"more than half of the replications failed for {', '.join(bad)}")
    return rows, records


def format_summary(rows, fmt="csv"):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=DELIMITERS[fmt], lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for row in rows:
        w.writerow(row.cells())
    return buf.getvalue()


def format_detail(records, fmt="csv"):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=DELIMITERS[fmt], lineterminator="\n")
    w.writerow(DETAIL_FIELDS)
    for r in records:
        w.writerow([
            r.rep, r.penalty, "" if r.tau_star is None else f"{r.tau_star:.6g}",
            "" if r.tp is None else r.tp, "" if r.fp is None else r.fp, "" if r.mcv is None else r.mcv,
            "" if r.mse is None else f"{r.mse:.6f}", r.iters, int(r.converged),
        ])
    return buf.getvalue()


def load_config(path):
    """``(Scenario, BenchSettings)`` from a YAML or JSON file with
    ``scenario`` and ``bench`` sections."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        doc = json.loads(text)
    else:
        import yaml

        doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValidationError("config must be a mapping")
    unknown = set(doc) - {"scenario", "bench"}
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    sc = doc.get("scenario") or {}
    preset = sc.pop("preset", None) if isinstance(sc, dict) else None
    try:
        if preset == "table1":
            scenario = simgen.table1_scenario(**sc)
        elif preset == "bma":
            scenario = simgen.bma_like_scenario(**sc)
        elif preset is None:
            scenario = simgen.Scenario.from_dict(sc)
        else:
            raise ValidationError(f"unknown scenario preset {preset!r}")
        bench = BenchSettings(**(doc.get("bench") or {}))
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
    return scenario, bench
