"""Least-squares surrogate of the profile objective and the penalized updates.

Around an expansion point ``beta`` the negative profile objective is
approximated by ``0.5 * ||W - X b||^2`` with ``X' X = -H`` (upper-triangular
Cholesky factor) and ``X' W = X' X beta + u``. Penalized updates then work on
``Q = X' X`` and ``c = X' W`` only.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import IndefiniteHessian, InfiniteWeight, NoConvergence, NumericalError
from .kernels import shooting as _shooting

JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class BAR:
    """Broken adaptive ridge with perturbation ``delta`` in the reweighting."""

    delta: float = 1e-6
    label = "BAR"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("BAR delta must be > 0")


@dataclass(frozen=True)
class LASSO:
    label = "LASSO"


@dataclass(frozen=True, eq=False)
class ALASSO:
    """Adaptive lasso with weights ``1 / |reference|**psi``. A missing
    reference means "use the unpenalized estimate"."""

    psi: float = 1.0
    reference: np.ndarray | None = None
    label = "ALASSO"

    def __post_init__(self):
        if not self.psi > 0:
            raise ValueError("ALASSO psi must be > 0")

    def __eq__(self, other):
        if not isinstance(other, ALASSO):
            return NotImplemented
        same_ref = (self.reference is None and other.reference is None) or (
            self.reference is not None
            and other.reference is not None
            and np.array_equal(self.reference, other.reference)
        )
        return self.psi == other.psi and same_ref


def penalty_from_name(name, **kw):
    name = name.lower()
    if name == "bar":
        return BAR(**kw)
    if name == "lasso":
        return LASSO()
    if name == "alasso":
        return ALASSO(**kw)
    raise ValueError(f"unknown penalty {name!r}")


@dataclass(frozen=True, eq=False)
class Surrogate:
    X: np.ndarray
    W: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gram", self.X.T @ self.X)
        object.__setattr__(self, "xtw", self.X.T @ self.W)

    def loss(self, beta):
        res = self.W - self.X @ beta
        return 0.5 * float(res @ res)


def build_surrogate(H, u, beta):
    """Cholesky surrogate of ``-profile`` at ``beta``.

    ``-H`` is factorised as ``X' X``; if that fails a ridge ``eps * I`` is
    added with ``eps`` growing tenfold from 1e-8 to 1e-2.
    """
    H = np.asarray(H, dtype=float)
    u = np.asarray(u, dtype=float)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    negH = -0.5 * (H + H.T)
    p = negH.shape[0]
    jitter = 0.0
    while True:
        try:
            X = linalg.cholesky(negH + jitter * np.eye(p), lower=False)
            break
        except linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise IndefiniteHessian("-H is not positive definite even with jitter 1e-2") from None
    # X'X beta + u equals -H beta + u when no jitter was needed
    rhs = X.T @ (X @ beta) + u
    W = linalg.solve_triangular(X, rhs, trans="T", lower=False)
    return Surrogate(X, W, jitter)


def bar_weights(beta_prev, delta):
    b = np.asarray(beta_prev, dtype=float)
    return 1.0 / (b * b + delta * delta)


def bar_step(surrogate, beta_prev, tau, delta=1e-6):
    """``(X'X + tau * diag(1/(b^2 + delta^2)))^{-1} X'W`` with ``b = beta_prev``.

    Solved in the rescaled variable ``g = b_scaled^{-1} beta`` so the huge
    weights of near-zero coefficients do not wreck the conditioning.
    """
    b = np.asarray(beta_prev, dtype=float)
    if not np.all(np.isfinite(b)):
        raise NumericalError("beta_prev is not finite")
    Q, c = surrogate.gram, surrogate.xtw
    if tau == 0:
        return linalg.solve(Q, c, assume_a="pos")
    s = np.sqrt(b * b + delta * delta)
    M = (s[:, None] * Q) * s[None, :]
    M[np.diag_indices_from(M)] += tau
    try:
        g = linalg.solve(M, s * c, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise NumericalError(f"BAR system is singular: {exc}") from None
    return s * g


def bar_map_residual(surrogate, beta, tau, delta=1e-6):
    """``||beta - bar_step(beta)||``: zero exactly at a BAR fixed point."""
    beta = np.asarray(beta, dtype=float)
    return float(np.linalg.norm(beta - bar_step(surrogate, beta, tau, delta)))


def bar_fixed_point(surrogate, beta_init, tau, delta=1e-6, tol=1e-6, max_iter=500):
    """Iterate :func:`bar_step` until successive iterates differ by < ``tol``.

    Returns ``(beta, iterations)``.
    """
    beta = np.asarray(beta_init, dtype=float).copy()
    for it in range(1, max_iter + 1):
        new = bar_step(surrogate, beta, tau, delta)
        step = float(np.linalg.norm(new - beta))
        beta = new
        if step < tol:
            return beta, it
    raise NoConvergence(f"BAR iteration did not settle in {max_iter} steps", last=beta)


def _run_shooting(surrogate, pen, beta_init, tol, max_iter):
    Q, c = surrogate.gram, surrogate.xtw
    beta0 = np.zeros(Q.shape[0]) if beta_init is None else np.asarray(beta_init, dtype=float)
    beta, sweeps, kkt, hist = _shooting(Q, c, pen, beta0, tol, max_iter)
    if kkt >= tol:
        raise NoConvergence(f"shooting did not reach KKT residual {tol} in {max_iter} sweeps", last=beta)
    return beta, hist + 0.5 * float(surrogate.W @ surrogate.W)


def lasso_shooting(surrogate, tau, beta_init=None, tol=1e-8, max_iter=10_000, return_history=False):
    """Minimiser of ``0.5 ||W - X b||^2 + tau * sum|b|`` by cyclic coordinate
    descent with soft thresholding."""
    p = surrogate.X.shape[1]
    beta, hist = _run_shooting(surrogate, np.full(p, float(tau)), beta_init, tol, max_iter)
    return (beta, hist) if return_history else beta


def adaptive_weights(reference, psi=1.0):
    """``1 / |reference|**psi``; a zero reference coefficient is an error."""
    ref = np.abs(np.asarray(reference, dtype=float))
    if np.any(ref == 0) or not np.all(np.isfinite(ref)):
        raise InfiniteWeight("adaptive-lasso reference has zero or non-finite entries")
    return ref ** (-psi)


def alasso_shooting(surrogate, tau, weights, beta_init=None, tol=1e-8, max_iter=10_000, return_history=False):
    """Weighted shooting: minimiser of ``0.5 ||W - X b||^2 + tau * sum w_a |b_a|``."""
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InfiniteWeight("adaptive weights must be finite and nonnegative")
    beta, hist = _run_shooting(surrogate, float(tau) * w, beta_init, tol, max_iter)
    return (beta, hist) if return_history else beta


def penalty_value(kind, beta, tau, beta_ref=None):
    """Penalty total: ``tau*sum|b|`` (LASSO), ``tau*sum|b|/|ref|^psi``
    (ALASSO), ``tau*sum b^2/(ref^2+delta^2)`` (BAR at reference ``ref``)."""
    b = np.asarray(beta, dtype=float)
    if isinstance(kind, LASSO):
        return float(tau * np.sum(np.abs(b)))
    if isinstance(kind, ALASSO):
        ref = kind.reference if beta_ref is None else beta_ref
        return float(tau * np.sum(adaptive_weights(ref, kind.psi) * np.abs(b)))
    if isinstance(kind, BAR):
        ref = b if beta_ref is None else np.asarray(beta_ref, dtype=float)
        return float(tau * np.sum(b * b * bar_weights(ref, kind.delta)))
    raise TypeError(f"unknown penalty kind {kind!r}")
