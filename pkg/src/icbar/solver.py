"""EM-embedded fitting: unpenalized initial fit, penalized fits (BAR, LASSO,
adaptive LASSO) on the Cholesky surrogate, GCV tuning of ``tau`` and the
grid search over transformation parameters."""

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import emcore
from .emcore import ModelState, as_problem, initial_state
from .errors import (
    DegenerateGCV,
    IcbarError,
    NoConvergence,
    NonPositiveSurvival,
    NumericalError,
)
from .penalty import (
    ALASSO,
    BAR,
    LASSO,
    adaptive_weights,
    alasso_shooting,
    bar_fixed_point,
    bar_map_residual,
    bar_step,
    build_surrogate,
    lasso_shooting,
    penalty_value,
)

log = logging.getLogger(__name__)

MAX_HALVINGS = 30
WORSEN_PATIENCE = 10
MIN_DAMPING = 1.0 / 1024
LOG_LAMBDA_MIN = math.log(emcore.LAMBDA_FLOOR)
LOG_LAMBDA_MAX = math.log(1e6)
BETA_LIMIT = 50.0


@dataclass
class FitConfig:
    penalty: object = None
    tau: float = 0.0
    outer_tol: float = 1e-6
    max_outer: int = 5000
    inner_tol: float = 1e-6
    inner_max: int = 500
    shoot_tol: float = 1e-8
    shoot_max: int = 10_000
    zero_threshold: float = 1e-5
    lambda_init: float | None = None  # None -> 1/n
    ridge_tau: float = 1.0
    accelerate: bool = False
    polish_tol: float = 1e-10
    polish_max: int = 10_000

    def __post_init__(self):
        for name in ("outer_tol", "inner_tol", "shoot_tol", "zero_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")

    def replace(self, **kw):
        vals = dict(self.__dict__)
        vals.update(kw)
        return FitConfig(**vals)


@dataclass
class FitResult:
    beta_hat: np.ndarray
    support: list
    lambda_hat: list
    loglik_observed: float
    profile_objective: float
    iterations: int
    converged: bool
    trace: list
    state: ModelState = field(repr=False)
    penalty: str = "none"
    tau: float = 0.0
    gcv: float | None = None
    effective_df: float | None = None
    fixed_point_residual: float | None = None
    beta_raw: np.ndarray | None = field(default=None, repr=False)
    r: tuple = ()

    @property
    def n_nonzero(self):
        return int(sum(len(s) for s in self.support))


def _threshold(beta, thr):
    out = np.where(np.abs(beta) > thr, beta, 0.0)
    return out, [np.flatnonzero(row) for row in out]


def _lambda_change(old, new):
    return max((float(np.max(np.abs(a - b))) if a.size else 0.0) for a, b in zip(old, new))


def _safe_lambda(problem, state, base=None):
    """Closed-form jump update, backtracked in log scale toward the current
    jumps until the EM objective (slot weights fixed) does not decrease.

    The closed form solves the jump score equation with its denominator
    frozen, so on its own it can overshoot; the log-scale direction always
    has the sign of the score, which makes the backtracking well defined.
    """
    if base is None:
        base = _objective_or_nan(problem, state, state.beta)
    target = emcore.update_lambda(problem, state)
    log_old = [np.log(np.maximum(v, emcore.LAMBDA_FLOOR)) for v in state.lam]
    log_new = [np.log(np.maximum(v, emcore.LAMBDA_FLOOR)) for v in target]
    trial = ModelState(state.beta, target, state.omega)
    t = 1.0
    for _ in range(MAX_HALVINGS):
        if t < 1.0:
            trial.lam = [np.where(sup, np.exp(lo + t * (ln - lo)), 0.0)
                         for sup, lo, ln in zip(problem.support, log_old, log_new)]
        value = _objective_or_nan(problem, trial, state.beta)
        if value >= base - 1e-10 * max(1.0, abs(base)):
            return trial.lam
        t *= 0.5
    return [v.copy() for v in state.lam]


def _objective_or_nan(problem, state, beta):
    try:
        return emcore.profile_objective(problem, state, beta)
    except NonPositiveSurvival:
        return -math.inf


def _newton_direction(H, u, free):
    Hf = H[np.ix_(free, free)]
    step = np.zeros_like(u)
    if free.size == 0:
        return step
    try:
        cho = linalg.cho_factor(-Hf)
        step[free] = linalg.cho_solve(cho, u[free])
    except linalg.LinAlgError:
        step[free] = linalg.lstsq(-Hf, u[free])[0]
    return step


def _finish(problem, state, cfg, iterations, converged, trace, label, tau):
    state.omega = emcore.e_step(problem, state)
    beta_raw = state.beta.copy()
    beta_hat, support = _threshold(beta_raw, cfg.zero_threshold)
    return FitResult(
        beta_hat=beta_hat,
        support=support,
        lambda_hat=[v.copy() for v in state.lam],
        loglik_observed=emcore.observed_loglik(problem, state),
        profile_objective=emcore.profile_objective(problem, state),
        iterations=iterations,
        converged=converged,
        trace=trace,
        state=state,
        penalty=label,
        tau=tau,
        beta_raw=beta_raw,
        r=problem.r,
    )


class _Ridge:
    """Ridge pull toward zero, used only by the fallback initializer."""

    label = "ridge"
    delta = 1e-6


def _penalty_total(kind, beta, tau, ref, weights):
    if kind is None or tau == 0:
        return 0.0
    if isinstance(kind, _Ridge):
        return float(tau * np.sum(beta * beta) / (1.0 + kind.delta**2))
    if isinstance(kind, ALASSO):
        return float(tau * np.sum(weights * np.abs(beta)))
    return penalty_value(kind, beta, tau, ref)


class _Stepper:
    """One EM cycle of a fit plus its step-size safeguards.

    Unpenalized: slot weights, jumps, then one Newton step on the free
    coefficients. Penalized: slot weights, surrogate, penalized update, then
    jumps at the new coefficients.
    """

    def __init__(self, problem, cfg, kind=None, tau=0.0, weights=None, free=None, penalized=False):
        self.problem, self.cfg = problem, cfg
        self.kind, self.tau, self.weights = kind, float(tau), weights
        self.penalized = penalized
        size = problem.K * problem.d
        self.free = np.arange(size) if free is None else np.flatnonzero(np.asarray(free, bool).reshape(-1))
        self.damping, self.worse = 1.0, 0
        self.last_surrogate = None

    def _proposal(self, H, u, beta):
        kind, tau, cfg = self.kind, self.tau, self.cfg
        sur = build_surrogate(H, u, beta)
        self.last_surrogate = sur
        if kind is None or tau == 0:
            return bar_step(sur, beta, 0.0)
        if isinstance(kind, _Ridge):
            return bar_step(sur, np.ones_like(beta), tau, kind.delta)
        if isinstance(kind, BAR):
            try:
                return bar_fixed_point(sur, beta, tau, kind.delta, cfg.inner_tol, cfg.inner_max)[0]
            except NoConvergence as exc:
                # the next outer cycle resumes the inner iteration from here
                return exc.last
        if isinstance(kind, ALASSO):
            return alasso_shooting(sur, tau, self.weights, beta, cfg.shoot_tol, cfg.shoot_max)
        if isinstance(kind, LASSO):
            return lasso_shooting(sur, tau, beta, cfg.shoot_tol, cfg.shoot_max)
        raise TypeError(f"unknown penalty {kind!r}")

    def cycle(self, state):
        p = self.problem
        s = state.copy()
        s.omega = emcore.e_step(p, s)
        if not self.penalized:
            s.lam = _safe_lambda(p, s)
        value, u, H = emcore.profile_derivatives(p, s)
        beta = s.beta.reshape(-1)
        if self.penalized:
            direction = self._proposal(H, u, beta) - beta
        else:
            direction = _newton_direction(H, u, self.free)
        pen = lambda b: _penalty_total(self.kind, b, self.tau, beta, self.weights)  # noqa: E731
        before = -value + pen(beta)
        t = self.damping
        for _ in range(MAX_HALVINGS):
            cand = beta + t * direction
            profile = _objective_or_nan(p, s, cand)
            after = -profile + pen(cand)
            if np.isfinite(after):
                break
            t *= 0.5
        else:
            raise NumericalError("update cannot leave a degenerate region")
        self.worse = self.worse + 1 if after > before else 0
        if self.worse >= WORSEN_PATIENCE:
            self.damping, self.worse = max(self.damping * 0.5, MIN_DAMPING), 0
        s.beta = cand.reshape(p.K, p.d)
        if self.penalized:
            s.lam = _safe_lambda(p, s, base=profile)
        return s

    def merit(self, state):
        """Penalized negative observed log-likelihood (lower is better)."""
        try:
            s = state.copy()
            ll = emcore.observed_loglik(self.problem, s)
        except NumericalError:
            return math.inf
        b = state.beta.reshape(-1)
        return -ll + _penalty_total(self.kind, b, self.tau, b, self.weights)

    def step_size(self, old, new):
        if self.free.size == 0:
            return _lambda_change(old.lam, new.lam)
        return float(np.linalg.norm(new.beta - old.beta))


def _theta(problem, state):
    parts = [state.beta.reshape(-1)]
    parts += [np.log(state.lam[k][problem.support[k]]) for k in range(problem.K)]
    return np.concatenate(parts)


def _from_theta(problem, theta):
    K, d = problem.K, problem.d
    beta = theta[: K * d].reshape(K, d).copy()
    lam, pos = [], K * d
    for k in range(K):
        sup = problem.support[k]
        cnt = int(sup.sum())
        v = np.zeros(problem.m[k])
        v[sup] = np.exp(np.clip(theta[pos:pos + cnt], LOG_LAMBDA_MIN, LOG_LAMBDA_MAX))
        lam.append(v)
        pos += cnt
    return ModelState(beta, lam, None)


def _drive(problem, state, stepper, cfg, what):
    """Iterate ``stepper.cycle`` to convergence, optionally with squared
    extrapolation over ``(beta, log lambda)``.

    Convergence is always judged on a plain cycle: the fit stops when one
    cycle moves the coefficients by less than ``cfg.outer_tol``.
    """
    trace = []
    evals = 0
    max_step = 4.0
    while evals < cfg.max_outer:
        s1 = stepper.cycle(state)
        evals += 1
        trace.append(stepper.step_size(state, s1))
        if trace[-1] < cfg.outer_tol:
            return s1, evals, trace
        if not cfg.accelerate:
            state = s1
            continue
        s2 = stepper.cycle(s1)
        evals += 1
        trace.append(stepper.step_size(s1, s2))
        if trace[-1] < cfg.outer_tol:
            return s2, evals, trace
        t0, t1, t2 = (_theta(problem, s) for s in (state, s1, s2))
        r = t1 - t0
        v = t2 - 2.0 * t1 + t0
        nv = float(np.linalg.norm(v))
        alpha = -float(np.linalg.norm(r)) / nv if nv > 0 else -1.0
        alpha = min(-1.0, max(alpha, -max_step))
        if alpha == -1.0:
            state = s2
            continue
        ext = t0 - 2.0 * alpha * r + alpha * alpha * v
        try:
            if not np.all(np.isfinite(ext)) or np.max(np.abs(ext[: problem.K * problem.d])) > BETA_LIMIT:
                raise NumericalError("extrapolated point out of range")
            s3 = stepper.cycle(_from_theta(problem, ext))
            evals += 1
            ok = stepper.merit(s3) <= stepper.merit(s2)
        except NumericalError:
            ok = False
        if ok:
            state = s3
            if alpha == -max_step:
                max_step *= 4.0
        else:
            state = s2
    raise NoConvergence(
        f"{what} did not converge in {cfg.max_outer} cycles (last step {trace[-1]:.3g})",
        last=state,
        trace=trace,
    )


def _start_state(problem, cfg):
    lam0 = None
    if cfg.lambda_init is not None:
        lam0 = [np.full(m, cfg.lambda_init) for m in problem.m]
    state = initial_state(problem, lam=lam0)
    # shrink the starting jumps until every censored subject has survival mass
    for _ in range(MAX_HALVINGS):
        try:
            emcore._survival_censored(problem, emcore._all_loads(problem, state))
            return state
        except NonPositiveSurvival:
            state.lam = [0.5 * v for v in state.lam]
    raise NonPositiveSurvival("no admissible starting jumps")


def fit_unpenalized(data, specs=None, config=None, free=None, init=None):
    """EM with one Newton step on beta per cycle, from ``beta = 0`` and jumps
    ``1/n``. ``free`` (boolean ``K x d`` mask) pins the other coefficients at
    zero. Raises :class:`NoConvergence` after ``config.max_outer`` cycles."""
    problem = as_problem(data, specs)
    cfg = config or FitConfig()
    K, d = problem.K, problem.d
    mask = np.ones((K, d), dtype=bool) if free is None else np.asarray(free, dtype=bool).reshape(K, d)
    state = init.copy() if init is not None else _start_state(problem, cfg)
    state.beta = np.where(mask, state.beta, 0.0)
    stepper = _Stepper(problem, cfg, free=mask)
    state, its, trace = _drive(problem, state, stepper, cfg, "unpenalized EM")
    return _finish(problem, state, cfg, its, True, trace, "none", 0.0)


def oracle_fit(data, specs=None, true_support=None, config=None):
    """Unpenalized fit with coefficients outside ``true_support`` fixed at 0."""
    problem = as_problem(data, specs)
    support = np.ones((problem.K, problem.d), bool) if true_support is None else np.asarray(true_support, bool)
    res = fit_unpenalized(problem, config=config, free=support)
    res.penalty = "Oracle"
    return res


def _ridge_initial(problem, cfg):
    """Fallback initial estimate: EM where the beta update is a ridge step."""
    stepper = _Stepper(problem, cfg, kind=_Ridge(), tau=cfg.ridge_tau, penalized=True)
    state = _start_state(problem, cfg)
    state, its, trace = _drive(problem, state, stepper, cfg, "ridge initial fit")
    return _finish(problem, state, cfg, its, True, trace, "ridge", cfg.ridge_tau)


def initial_estimate(data, specs=None, config=None):
    """Unpenalized fit, or a ridge fit if that does not converge."""
    problem = as_problem(data, specs)
    cfg = config or FitConfig()
    try:
        return fit_unpenalized(problem, config=cfg)
    except (NoConvergence, NumericalError) as exc:
        log.info("unpenalized fit failed (%s); falling back to ridge start", exc)
        return _ridge_initial(problem, cfg)


def fit_penalized(data, specs=None, config=None, init=None, start=None):
    """Penalized EM-embedded fit at a fixed ``tau``.

    ``init`` is the unpenalized :class:`FitResult` (computed if omitted); it
    supplies the starting point and the adaptive-lasso reference. ``start``
    (a :class:`FitResult`) overrides the starting state, for warm starts.
    """
    problem = as_problem(data, specs)
    cfg = config or FitConfig()
    kind, tau = cfg.penalty, float(cfg.tau)
    if init is None:
        init = initial_estimate(problem, config=cfg)
    weights = None
    if isinstance(kind, ALASSO):
        ref = init.beta_raw if kind.reference is None else np.asarray(kind.reference)
        weights = adaptive_weights(np.reshape(ref, -1), kind.psi)
    label = "none" if kind is None else kind.label
    stepper = _Stepper(problem, cfg, kind=kind, tau=tau, weights=weights, penalized=True)
    state = (start or init).state.copy()
    state, its, trace = _drive(problem, state, stepper, cfg, f"penalized fit ({label}, tau={tau:g})")
    residual = None
    if isinstance(kind, BAR) and tau > 0 and stepper.last_surrogate is not None:
        # settle the last inner iteration exactly on the final surrogate
        sur = stepper.last_surrogate
        b = state.beta.reshape(-1)
        try:
            b = bar_fixed_point(sur, b, tau, kind.delta, cfg.polish_tol, cfg.polish_max)[0]
        except NoConvergence as exc:
            b = exc.last
        state.beta = b.reshape(problem.K, problem.d)
        residual = bar_map_residual(sur, b, tau, kind.delta)
    res = _finish(problem, state, cfg, its, True, trace, label, tau)
    res.fixed_point_residual = residual
    return res


def effective_df(H, beta, kind, tau, zero_threshold=1e-5, weights=None):
    """``tr{(-H + eta)^{-1}(-H)}`` where ``eta`` is the local ridge equivalent
    of the penalty. Coefficients reported as zero carry no degrees of freedom
    under the L1 penalties."""
    negH = -np.asarray(H, dtype=float)
    b = np.asarray(beta, dtype=float).reshape(-1)
    if kind is None or tau == 0:
        keep = np.arange(b.size)
        eta = np.zeros(b.size)
    elif isinstance(kind, BAR):
        keep = np.arange(b.size)
        eta = tau / (b * b + kind.delta**2)
    else:
        keep = np.flatnonzero(np.abs(b) > zero_threshold)
        w = np.ones(b.size) if weights is None else np.asarray(weights, dtype=float)
        eta = np.zeros(b.size)
        eta[keep] = tau * w[keep] / np.abs(b[keep])
    if keep.size == 0:
        return 0.0
    A = negH[np.ix_(keep, keep)]
    M = A + np.diag(eta[keep])
    return float(np.trace(linalg.solve(M, A)))


def gcv_score(data, fit, tau=None, penalty=None, specs=None, weights=None, loss="profile"):
    """``loss / (n (1 - s/n)^2)`` with ``s`` from :func:`effective_df`.

    ``loss="profile"`` uses the negated profile objective at the fitted
    state (slot weights and jumps included); ``loss="observed"`` uses the
    negated observed-data log-likelihood instead.
    """
    problem = as_problem(data, specs)
    tau = fit.tau if tau is None else tau
    value, _, H = emcore.profile_derivatives(problem, fit.state)
    if loss == "observed":
        value = emcore.observed_loglik(problem, fit.state)
    elif loss != "profile":
        raise ValueError(f"unknown GCV loss {loss!r}")
    s = effective_df(H, fit.beta_raw, penalty, tau, weights=weights)
    n = problem.n
    if s >= n:
        raise DegenerateGCV(f"effective number of parameters {s:.3g} >= n = {n}")
    fit.effective_df = s
    return -value / (n * (1.0 - s / n) ** 2)


def default_tau_grid(n, size=20, low=1e-2, high=1e2):
    """``size`` log-spaced values in ``[low, high] * sqrt(n)``."""
    return np.logspace(math.log10(low), math.log10(high), size) * math.sqrt(n)


@dataclass
class TuningRow:
    tau: float
    gcv: float
    n_nonzero: int
    converged: bool
    iterations: int
    residual: float | None = None
    error: str = ""


def select_tau(data, specs=None, penalty=None, tau_grid=None, config=None, init=None, gcv_loss="profile"):
    """Fit every ``tau`` in the grid (ascending) and keep the GCV minimiser.

    Returns ``(tau_star, fit, table)``. Lasso-type fits are warm-started from
    the previous ``tau``; BAR fits always start from the initial estimate.
    Raises :class:`NumericalError` if every ``tau`` fails.
    """
    problem = as_problem(data, specs)
    cfg = (config or FitConfig()).replace(penalty=penalty)
    grid = np.sort(np.asarray(default_tau_grid(problem.n) if tau_grid is None else tau_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty tau grid")
    if init is None:
        init = initial_estimate(problem, config=cfg)
    weights = None
    if isinstance(penalty, ALASSO):
        ref = init.beta_raw if penalty.reference is None else np.asarray(penalty.reference)
        weights = adaptive_weights(np.reshape(ref, -1), penalty.psi)
    best, table, errors = None, [], []
    prev = None
    for tau in grid:
        try:
            start = prev if isinstance(penalty, (LASSO, ALASSO)) else None
            fit = fit_penalized(problem, config=cfg.replace(tau=float(tau)), init=init, start=start)
            fit.gcv = gcv_score(problem, fit, float(tau), penalty, weights=weights, loss=gcv_loss)
        except IcbarError as exc:
            table.append(TuningRow(float(tau), math.nan, -1, False, 0, None, f"{type(exc).__name__}: {exc}"))
            errors.append(exc)
            continue
        prev = fit
        table.append(TuningRow(float(tau), fit.gcv, fit.n_nonzero, fit.converged, fit.iterations,
                               fit.fixed_point_residual))
        if best is None or fit.gcv < best.gcv:
            best = fit
    if best is None:
        raise NumericalError(f"every tau failed; first error: {errors[0]}")
    return best.tau, best, table


def r_grid(rmax=3.0, rstep=0.2, K=2):
    """All ``K``-tuples over ``{rstep, 2 rstep, ..., rmax}``."""
    if not (rmax > 0 and rstep > 0):
        raise ValueError("rmax and rstep must be positive")
    count = int(math.floor(rmax / rstep + 1e-9))
    vals = [round(rstep * i, 10) for i in range(1, count + 1)]
    return [tuple(p) for p in itertools.product(vals, repeat=K)]


@dataclass
class GridCell:
    r: tuple
    loglik: float
    converged: bool
    iterations: int = 0
    error: str = ""


def grid_row(data, pairs, config=None, warm_start=True):
    """Unpenalized fits along one row of the grid, in the given order; each
    fit starts from the previous cell's estimate when ``warm_start``."""
    problem = data if isinstance(data, emcore.Problem) else None
    cells, prev = [], None
    for pair in pairs:
        try:
            pb = problem.with_specs(pair) if problem is not None else emcore.Problem(data, pair)
            problem = problem or pb
            fit = fit_unpenalized(pb, config=config, init=prev.state if (warm_start and prev) else None)
        except IcbarError as exc:
            cells.append(GridCell(tuple(pair), math.nan, False, 0, f"{type(exc).__name__}: {exc}"))
            continue
        prev = fit
        cells.append(GridCell(tuple(pair), fit.loglik_observed, True, fit.iterations))
    return cells


def best_cell(cells):
    """Largest log-likelihood; ties go to the lexicographically smaller pair."""
    ok = [c for c in cells if c.converged and np.isfinite(c.loglik)]
    if not ok:
        raise NumericalError("every transformation pair failed")
    return max(sorted(ok, key=lambda c: c.r), key=lambda c: c.loglik)


def _rows(pairs):
    rows = {}
    for p in sorted(pairs):
        rows.setdefault(p[:-1], []).append(p)
    return list(rows.values())


def select_transformation(data, pairs=None, config=None, warm_start=True, map_rows=map):
    """Unpenalized fit for each ``(r_1, ..., r_K)`` in ``pairs``; returns
    ``(best_pair, table)`` with the log-likelihood maximiser.

    Rows sharing ``r_1..r_{K-1}`` are fitted in order of the last component,
    warm-starting along the row. ``map_rows`` may be a parallel map; the
    result does not depend on it. Failed cells stay in the table.
    """
    if not isinstance(data, emcore.Problem):
        data = list(data)
    pairs = r_grid() if pairs is None else [tuple(float(v) for v in p) for p in pairs]
    rows = _rows(pairs)
    table = []
    for cells in map_rows(functools.partial(grid_row, data, config=config, warm_start=warm_start), rows):
        table.extend(cells)
    table.sort(key=lambda c: c.r)
    try:
        return best_cell(table).r, table
    except NumericalError as exc:
        exc.table = table
        raise
