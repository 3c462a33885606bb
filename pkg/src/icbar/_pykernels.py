"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built or when
``ICBAR_PURE_PYTHON=1`` is set.
"""

import numpy as np


def revcumsum(a, axis=-1):
    """Reverse cumulative sum: ``out[j] = sum(a[j:])`` along ``axis``."""
    a = np.asarray(a, dtype=float)
    return np.flip(np.cumsum(np.flip(a, axis), axis=axis), axis)


def _objective(Q, c, pen, beta):
    return 0.5 * beta @ Q @ beta - c @ beta + np.sum(pen * np.abs(beta))


def _kkt(grad, pen, beta):
    nz = beta != 0
    res = np.where(nz, np.abs(grad - pen * np.sign(beta)), np.maximum(np.abs(grad) - pen, 0.0))
    return float(res.max()) if res.size else 0.0


def shooting(Q, c, pen, beta0, tol, max_iter):
    """Cyclic coordinate descent for ``0.5 b'Qb - c'b + sum(pen * |b|)``.

    Coordinates are visited in ascending order. Returns
    ``(beta, sweeps, kkt_residual, history)`` where ``history[s]`` is the
    objective after ``s`` sweeps.
    """
    Q = np.ascontiguousarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    pen = np.asarray(pen, dtype=float)
    beta = np.array(beta0, dtype=float)
    p = beta.size
    grad = c - Q @ beta
    history = [_objective(Q, c, pen, beta)]
    kkt = _kkt(grad, pen, beta)
    sweeps = 0
    while kkt >= tol and sweeps < max_iter:
        for a in range(p):
            qaa = Q[a, a]
            z = grad[a] + qaa * beta[a]
            if z > pen[a]:
                new = (z - pen[a]) / qaa
            elif z < -pen[a]:
                new = (z + pen[a]) / qaa
            else:
                new = 0.0
            step = new - beta[a]
            if step != 0.0:
                grad -= Q[:, a] * step
                beta[a] = new
        sweeps += 1
        history.append(_objective(Q, c, pen, beta))
        kkt = _kkt(grad, pen, beta)
    return beta, sweeps, kkt, np.array(history)
