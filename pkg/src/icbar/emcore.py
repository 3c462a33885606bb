"""Likelihood machinery for the transformation model with a discrete baseline.

Risk ``k`` has jumps ``lam[k][j]`` at grid times ``t_kj``. For subject ``i``
the cumulative load is ``A_ik(t) = sum_{t_kj <= t} lam[k][j] exp(beta_k' Z_i(t_kj))``
and the subdistribution is ``F_k(t) = 1 - exp(-G_k(A_ik(t)))``.

Risks are indexed from 0 here (cause ``c`` in a record is risk ``c - 1``).

A *slot* is a pair (subject ``i``, grid index ``j``) for risk ``k`` with
``t_kj`` inside ``(L_i, R_i]`` and the subject able to fail from ``k`` (known
cause ``k`` or missing cause). E-step weights live on slots.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import xlogy

from . import transform as tf
from .data import build_jump_grid, covariate_at
from .errors import (
    NonPositiveLambda,
    NonPositiveLikelihoodTerm,
    NonPositiveSurvival,
    ValidationError,
    ZeroDenominator,
)
from .kernels import revcumsum

SURVIVAL_FLOOR = 1e-12
TERM_FLOOR = 1e-300
_LOG_TERM_FLOOR = np.log(TERM_FLOOR)
LAMBDA_FLOOR = 1e-300

CENSORED, KNOWN, MISSING = 0, 1, 2


class Problem:
    """A dataset compiled against per-risk transformation specs.

    Immutable after construction; share freely across fits.
    """

    def __init__(self, dataset, specs):
        self.records = tuple(dataset)
        self.specs = tuple(tf.as_spec(s) for s in specs)
        if not self.records:
            raise ValidationError("empty dataset")
        self.K = len(self.specs)
        self.r = tuple(s.r for s in self.specs)
        self.grid = build_jump_grid(self.records, self.K)
        self.n = len(self.records)
        dims = {s.dim for s in self.records}
        if len(dims) != 1:
            raise ValidationError(f"covariate dimension differs across subjects: {sorted(dims)}")
        self.d = dims.pop()

        kind = np.empty(self.n, dtype=np.int64)
        cause = np.full(self.n, -1, dtype=np.int64)
        for i, s in enumerate(self.records):
            if not s.event_observed:
                kind[i] = CENSORED
            elif s.cause_missing:
                kind[i] = MISSING
            else:
                kind[i] = KNOWN
                cause[i] = s.cause - 1
        self.kind, self.cause = kind, cause
        self.censored = np.flatnonzero(kind == CENSORED)
        self.events = np.flatnonzero(kind != CENSORED)

        self.times = self.grid.times
        self.m = tuple(t.size for t in self.times)
        self.lo = tuple(np.asarray(c, dtype=np.int64) for c in self.grid.left_count)
        self.hi = tuple(np.asarray(c, dtype=np.int64) for c in self.grid.right_count)

        slot_i, slot_j, support = [], [], []
        for k in range(self.K):
            contrib = np.flatnonzero((kind == MISSING) | ((kind == KNOWN) & (cause == k)))
            counts = self.hi[k][contrib] - self.lo[k][contrib]
            si = np.repeat(contrib, counts)
            offs = np.arange(si.size) - np.repeat(np.cumsum(counts) - counts, counts)
            sj = self.lo[k][si] + offs
            slot_i.append(si)
            slot_j.append(sj)
            sup = np.zeros(self.m[k], dtype=bool)
            sup[sj] = True
            support.append(sup)
        self.slot_i, self.slot_j, self.support = tuple(slot_i), tuple(slot_j), tuple(support)
        # subject id of every slot, all risks concatenated (E-step normalisation)
        self._slot_subject = np.concatenate(self.slot_i) if self.K else np.empty(0, np.int64)
        self._slot_offsets = np.cumsum([0] + [s.size for s in self.slot_i])

        self.static = all(not s.time_varying for s in self.records)
        if self.static:
            self.Z = np.vstack([s.covariates[0] for s in self.records])
            self.zgrid = None
        else:
            self.Z = None
            self.zgrid = tuple(
                np.array([[covariate_at(s, t) for t in self.times[k]] for s in self.records]).reshape(
                    self.n, self.m[k], self.d
                )
                for k in range(self.K)
            )

    @property
    def p(self):
        return self.K * self.d

    def with_specs(self, specs):
        """Same data, different transformation parameters (grid reused)."""
        other = object.__new__(Problem)
        other.__dict__.update(self.__dict__)
        other.specs = tuple(tf.as_spec(s) for s in specs)
        if len(other.specs) != self.K:
            raise ValidationError("number of specs must match the number of risks")
        other.r = tuple(s.r for s in other.specs)
        return other

    def n_slots(self, k):
        return self.slot_i[k].size


@dataclass
class ModelState:
    """Current parameters: ``beta`` is ``K x d``; ``lam[k]`` aligns with the
    risk-``k`` grid; ``omega[k]`` aligns with the risk-``k`` slots."""

    beta: np.ndarray
    lam: list
    omega: list | None = None

    def copy(self):
        return ModelState(
            self.beta.copy(),
            [v.copy() for v in self.lam],
            None if self.omega is None else [w.copy() for w in self.omega],
        )


def initial_state(problem, beta=None, lam=None):
    """``beta = 0`` and every jump ``1/n`` unless given."""
    if beta is None:
        beta = np.zeros((problem.K, problem.d))
    beta = np.array(beta, dtype=float).reshape(problem.K, problem.d)
    if lam is None:
        lam = [np.full(m, 1.0 / problem.n) for m in problem.m]
    return ModelState(beta, [np.asarray(v, dtype=float).copy() for v in lam])


def as_problem(data, specs=None):
    if isinstance(data, Problem):
        if specs is not None:
            return data.with_specs(specs)
        return data
    if specs is None:
        raise ValueError("specs are required when passing raw records")
    return Problem(data, specs)


# ---------------------------------------------------------------------------
# cumulative loads


class _Loads:
    """Cumulative loads of one risk for every subject and slot."""

    __slots__ = ("x", "eta", "e", "cum", "A", "Aprev", "inc", "AL", "AR")


def _loads(problem, k, beta_k, lam_k):
    out = _Loads()
    si, sj = problem.slot_i[k], problem.slot_j[k]
    lo, hi = problem.lo[k], problem.hi[k]
    if problem.static:
        eta = problem.Z @ beta_k
        x = np.exp(eta)
        cum = np.concatenate(([0.0], np.cumsum(lam_k)))
        out.x, out.eta, out.e, out.cum = x, eta, None, cum
        xs = x[si]
        out.A = xs * cum[sj + 1]
        out.Aprev = xs * cum[sj]
        out.inc = xs * lam_k[sj]
        out.AL = x * cum[lo]
        out.AR = x * cum[hi]
    else:
        eta = problem.zgrid[k] @ beta_k
        e = lam_k[None, :] * np.exp(eta)
        cum = np.zeros((problem.n, problem.m[k] + 1))
        np.cumsum(e, axis=1, out=cum[:, 1:])
        rows = np.arange(problem.n)
        out.x, out.eta, out.e, out.cum = None, eta, e, cum
        out.A = cum[si, sj + 1]
        out.Aprev = cum[si, sj]
        out.inc = e[si, sj]
        out.AL = cum[rows, lo]
        out.AR = cum[rows, hi]
    return out


def _all_loads(problem, state, beta=None):
    beta = state.beta if beta is None else np.asarray(beta, dtype=float).reshape(problem.K, problem.d)
    return [_loads(problem, k, beta[k], state.lam[k]) for k in range(problem.K)]


def _survival_censored(problem, loads, strict=True):
    """Overall survival at L_i for the right-censored subjects."""
    c = problem.censored
    surv = np.ones(c.size)
    for k, ld in enumerate(loads):
        surv += np.expm1(-tf._g(problem.r[k], ld.AL[c]))
    if strict and surv.size and surv.min() <= SURVIVAL_FLOOR:
        bad = int(c[np.argmin(surv)])
        raise NonPositiveSurvival(
            f"overall survival {surv.min():.3g} <= {SURVIVAL_FLOOR} at L for subject "
            f"{problem.records[bad].id}",
            subject=bad,
        )
    return surv


# ---------------------------------------------------------------------------
# pointwise quantities


def _eta_at(problem, beta_k, i, k, j):
    if problem.static:
        return float(problem.Z[i] @ beta_k)
    return float(problem.zgrid[k][i, j] @ beta_k)


def cum_load(problem, state, i, k, t):
    """``sum_{t_kj <= t} lam_kj exp(beta_k' Z_i(t_kj))``."""
    count = int(np.searchsorted(problem.times[k], t, side="right"))
    lam = state.lam[k]
    return float(sum(lam[j] * np.exp(_eta_at(problem, state.beta[k], i, k, j)) for j in range(count)))


def subdist_F(problem, state, i, k, t):
    """Cumulative incidence of risk ``k`` for subject ``i`` at time ``t``."""
    return float(-np.expm1(-tf._g(problem.r[k], cum_load(problem, state, i, k, t))))


def survival_S(problem, state, i, t):
    """``1 - sum_k F_k(t)``; raises :class:`NonPositiveSurvival` when it is
    not above ``1e-12``."""
    total = 1.0 - sum(subdist_F(problem, state, i, k, t) for k in range(problem.K))
    if total <= SURVIVAL_FLOOR:
        raise NonPositiveSurvival(f"overall survival {total:.3g} at t={t} for subject {i}", subject=i)
    return total


def _check_slot(problem, i, k, j):
    lo, hi = int(problem.lo[k][i]), int(problem.hi[k][i])
    if not lo <= j < hi:
        raise ValueError(f"grid point {j} of risk {k} is not inside the interval of subject {i}")
    prev = 0.0
    lam, beta_k = None, None
    return lo, hi, prev, lam, beta_k


def _cum_upto(problem, state, i, k, count):
    lam = state.lam[k]
    return sum(lam[j] * np.exp(_eta_at(problem, state.beta[k], i, k, j)) for j in range(count))


def delta_F_exact(problem, state, i, k, j):
    """Jump of ``F_k`` for subject ``i`` at grid point ``j`` (inside its interval)."""
    _check_slot(problem, i, k, j)
    base = _cum_upto(problem, state, i, k, j)
    inc = state.lam[k][j] * np.exp(_eta_at(problem, state.beta[k], i, k, j))
    r = problem.r[k]
    return float(np.exp(-tf._g(r, base)) * -np.expm1(-tf._g_increment(r, base, inc)))


def delta_F_approx(problem, state, i, k, j):
    """First-order version ``G~(A_j) exp(beta_k' Z_ij) lam_kj`` of :func:`delta_F_exact`."""
    _check_slot(problem, i, k, j)
    a = _cum_upto(problem, state, i, k, j + 1)
    x = np.exp(_eta_at(problem, state.beta[k], i, k, j))
    return float(tf._g_tilde(problem.r[k], a) * x * state.lam[k][j])


# ---------------------------------------------------------------------------
# observed likelihood and E-step


def _log_interval_mass(r, AL, inc):
    """log[exp(-G(AL)) - exp(-G(AL + inc))]."""
    with np.errstate(divide="ignore"):
        return -tf._g(r, AL) + np.log(-np.expm1(-tf._g_increment(r, AL, inc)))


def subject_loglik(problem, state):
    """Per-subject log-likelihood contributions (vector of length n)."""
    loads = _all_loads(problem, state)
    out = np.empty(problem.n)
    per_risk = np.full((problem.K, problem.n), -np.inf)
    ev = problem.events
    for k, ld in enumerate(loads):
        per_risk[k, ev] = _log_interval_mass(problem.r[k], ld.AL[ev], ld.AR[ev] - ld.AL[ev])
    known = np.flatnonzero(problem.kind == KNOWN)
    out[known] = per_risk[problem.cause[known], known]
    miss = np.flatnonzero(problem.kind == MISSING)
    if miss.size:
        out[miss] = np.logaddexp.reduce(per_risk[:, miss], axis=0)
    c = problem.censored
    surv = _survival_censored(problem, loads, strict=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[c] = np.where(surv > TERM_FLOOR, np.log(np.maximum(surv, TERM_FLOOR)), -np.inf)
    bad = np.flatnonzero(~(out > _LOG_TERM_FLOOR))
    if bad.size:
        b = int(bad[0])
        raise NonPositiveLikelihoodTerm(
            f"likelihood factor of subject {problem.records[b].id} is not positive", subject=b
        )
    return out


def observed_loglik(problem, state):
    """Observed-data log-likelihood summed over subjects."""
    return float(np.sum(subject_loglik(problem, state)))


def slot_log_delta_F(problem, state, loads=None):
    """log of the exact jump of ``F_k`` at every slot, per risk."""
    loads = _all_loads(problem, state) if loads is None else loads
    return [_log_interval_mass(problem.r[k], ld.Aprev, ld.inc) for k, ld in enumerate(loads)]


def e_step(problem, state, loads=None):
    """Conditional probabilities of failing at each slot given the observed
    data; returns a new per-risk list of slot weights."""
    logs = slot_log_delta_F(problem, state, loads)
    allv = np.concatenate(logs) if logs else np.empty(0)
    sid = problem._slot_subject
    mx = np.full(problem.n, -np.inf)
    np.maximum.at(mx, sid, allv)
    with np.errstate(invalid="ignore"):
        w = np.exp(allv - mx[sid])
    tot = np.bincount(sid, weights=w, minlength=problem.n)
    ev = problem.events
    with np.errstate(divide="ignore"):
        logden = mx[ev] + np.log(tot[ev])
    bad = np.flatnonzero(~(logden > _LOG_TERM_FLOOR))
    if bad.size:
        b = int(ev[bad[0]])
        raise ZeroDenominator(
            f"interval mass of subject {problem.records[b].id} is below {TERM_FLOOR}", subject=b
        )
    omega = w / tot[sid]
    off = problem._slot_offsets
    return [omega[off[k]:off[k + 1]] for k in range(problem.K)]


# ---------------------------------------------------------------------------
# M-step


def lambda_denominator(problem, state, loads=None):
    """Denominators of the closed-form jump update, one array per risk.

    Uses the magnitude of ``G~'/G~`` so every term is nonnegative.
    """
    loads = _all_loads(problem, state) if loads is None else loads
    c = problem.censored
    surv = _survival_censored(problem, loads)
    dens = []
    for k, ld in enumerate(loads):
        r, m = problem.r[k], problem.m[k]
        si, sj = problem.slot_i[k], problem.slot_j[k]
        coef_slot = state.omega[k] * np.abs(tf._ratio(r, ld.A))
        coef_cens = tf._g_tilde(r, ld.AL[c]) / surv
        lo_c = problem.lo[k][c]
        has = lo_c > 0
        if problem.static:
            acc = np.bincount(sj, weights=coef_slot * ld.x[si], minlength=m)
            acc += np.bincount(lo_c[has] - 1, weights=(coef_cens * ld.x[c])[has], minlength=m)
            dens.append(revcumsum(acc))
        else:
            q = np.zeros((problem.n, m))
            np.add.at(q, (si, sj), coef_slot)
            np.add.at(q, (c[has], lo_c[has] - 1), coef_cens[has])
            q = revcumsum(q, axis=1)
            dens.append(np.einsum("ij,ij->j", q, np.exp(ld.eta)))
    return dens


def lambda_numerator(problem, state):
    return [np.bincount(problem.slot_j[k], weights=state.omega[k], minlength=problem.m[k]) for k in range(problem.K)]


def update_lambda(problem, state, loads=None):
    """One closed-form update of the baseline jumps with beta and the slot
    weights held fixed. Grid points that lie in no contributing interval get
    zero mass; every other jump must come out positive."""
    nums = lambda_numerator(problem, state)
    dens = lambda_denominator(problem, state, loads)
    out = []
    for k in range(problem.K):
        sup = problem.support[k]
        num, den = nums[k], dens[k]
        if np.any(~(num[sup] >= 0)) or np.any(~(den[sup] > 0)):
            j = int(np.flatnonzero(sup & ~((num >= 0) & (den > 0)))[0])
            raise NonPositiveLambda(f"jump {j} of risk {k} would be non-positive (num={num[j]:.3g}, den={den[j]:.3g})")
        lam = np.zeros(problem.m[k])
        # jumps the data push to zero would underflow; keep them tiny but positive
        lam[sup] = np.maximum(num[sup] / den[sup], LAMBDA_FLOOR)
        out.append(lam)
    return out


# ---------------------------------------------------------------------------
# profile objective and derivatives


def _profile(problem, state, beta, order):
    """Value (order 0), gradient (1) and Hessian (2) of the profile objective
    in beta with lam and omega held at their state values."""
    K, d = problem.K, problem.d
    beta = np.asarray(beta, dtype=float).reshape(K, d)
    loads = _all_loads(problem, state, beta)
    c = problem.censored
    value = 0.0
    grad = np.zeros((K, d)) if order >= 1 else None
    hess = np.zeros((K, d, K, d)) if order >= 2 else None

    surv = _survival_censored(problem, loads)
    if c.size:
        value += float(np.sum(np.log(surv)))

    # censored-subject scalars: S_k / S = -G~(AL) dAL / S
    gt = [tf._g_tilde(problem.r[k], loads[k].AL[c]) / surv for k in range(K)]
    if order >= 2:
        gtp = [tf._g_tilde_prime(problem.r[k], loads[k].AL[c]) / surv for k in range(K)]

    if problem.static:
        Z = problem.Z
        Zc = Z[c]
        acoef = [-gt[k] * loads[k].AL[c] for k in range(K)]
        for k in range(K):
            ld, r = loads[k], problem.r[k]
            si, sj, om = problem.slot_i[k], problem.slot_j[k], state.omega[k]
            A = ld.A
            with np.errstate(divide="ignore"):
                value += float(np.sum(xlogy(om, state.lam[k][sj]) + om * (ld.eta[si] + tf._log_g_tilde(r, A))))
            if order >= 1:
                rho = tf._ratio(r, A)
                gsub = np.bincount(si, weights=om * (1.0 + rho * A), minlength=problem.n)
                grad[k] = Z.T @ gsub + Zc.T @ acoef[k]
            if order >= 2:
                hs = om * (tf._ratio_prime(r, A) * A * A + rho * A)
                hsub = np.bincount(si, weights=hs, minlength=problem.n)
                AL = ld.AL[c]
                hc = -(gtp[k] * AL * AL + gt[k] * AL)
                hess[k, :, k, :] += (Z.T * hsub) @ Z + (Zc.T * hc) @ Zc
        if order >= 2 and c.size:
            for k in range(K):
                for l in range(K):
                    hess[k, :, l, :] -= (Zc.T * (acoef[k] * acoef[l])) @ Zc
    else:
        rows_c = c
        gvec = []
        for k in range(K):
            ld, r = loads[k], problem.r[k]
            zg = problem.zgrid[k]
            si, sj, om = problem.slot_i[k], problem.slot_j[k], state.omega[k]
            A = ld.A
            with np.errstate(divide="ignore"):
                value += float(np.sum(xlogy(om, state.lam[k][sj]) + om * (ld.eta[si, sj] + tf._log_g_tilde(r, A))))
            if order == 0:
                continue
            # B_ij = d A_ij / d beta_k, prefix-summed along the grid
            bp = np.zeros((problem.n, problem.m[k] + 1, d))
            np.cumsum(ld.e[:, :, None] * zg, axis=1, out=bp[:, 1:, :])
            Bs = bp[si, sj + 1]
            rho = tf._ratio(r, A)
            lo_c = problem.lo[k][rows_c]
            BL = bp[rows_c, lo_c]
            g_c = -gt[k][:, None] * BL
            gvec.append(g_c)
            grad[k] = (om[:, None] * zg[si, sj]).sum(axis=0) + ((om * rho)[:, None] * Bs).sum(axis=0) + g_c.sum(axis=0)
            if order >= 2:
                rp = tf._ratio_prime(r, A)
                hk = np.einsum("s,sa,sb->ab", om * rp, Bs, Bs)
                hk -= np.einsum("s,sa,sb->ab", gtp[k], BL, BL)
                q = np.zeros((problem.n, problem.m[k]))
                np.add.at(q, (si, sj), om * rho)
                has = lo_c > 0
                np.add.at(q, (rows_c[has], lo_c[has] - 1), -gt[k][has])
                q = revcumsum(q, axis=1) * ld.e
                hk += np.einsum("ij,ija,ijb->ab", q, zg, zg)
                hess[k, :, k, :] += hk
        if order >= 2 and c.size:
            for k in range(K):
                for l in range(K):
                    hess[k, :, l, :] -= gvec[k].T @ gvec[l]
    if order == 0:
        return value
    if order == 1:
        return value, grad.reshape(-1)
    p = K * d
    H = hess.reshape(p, p)
    return value, grad.reshape(-1), 0.5 * (H + H.T)


def profile_objective(problem, state, beta=None):
    """Profile objective in beta with the current jumps and slot weights."""
    return _profile(problem, state, state.beta if beta is None else beta, 0)


def gradient_u(problem, state, beta=None):
    """Gradient of :func:`profile_objective`, stacked risk-major."""
    return _profile(problem, state, state.beta if beta is None else beta, 1)[1]


def hessian_H(problem, state, beta=None):
    """Hessian of :func:`profile_objective` (full, including cross-risk blocks)."""
    return _profile(problem, state, state.beta if beta is None else beta, 2)[2]


def profile_derivatives(problem, state, beta=None):
    """``(value, gradient, Hessian)`` in one pass."""
    return _profile(problem, state, state.beta if beta is None else beta, 2)


def em_refresh(problem, state, beta=None):
    """Jump update followed by an E-step at ``beta``; returns a new state."""
    st = replace(state, beta=state.beta if beta is None else np.asarray(beta, float).reshape(problem.K, problem.d))
    st = ModelState(st.beta.copy(), update_lambda(problem, st), st.omega)
    st.omega = e_step(problem, st)
    return st
