# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. See ``_pykernels`` for the reference versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def revcumsum(a, axis=-1):
    arr = np.ascontiguousarray(np.moveaxis(np.asarray(a, dtype=np.float64), axis, -1))
    out = np.empty_like(arr)
    if arr.size == 0:
        return np.moveaxis(out, -1, axis)
    last = arr.shape[arr.ndim - 1]
    cdef double[:, ::1] src = arr.reshape(-1, last)
    cdef double[:, ::1] dst = out.reshape(-1, last)
    cdef Py_ssize_t rows = src.shape[0], m = src.shape[1], i, j
    cdef double acc
    for i in range(rows):
        acc = 0.0
        for j in range(m - 1, -1, -1):
            acc += src[i, j]
            dst[i, j] = acc
    return np.moveaxis(out, -1, axis)


cdef double _objective(double[:, ::1] Q, double[::1] c, double[::1] pen, double[::1] beta):
    cdef Py_ssize_t p = beta.shape[0], a, b
    cdef double quad = 0.0, lin = 0.0, row
    for a in range(p):
        if beta[a] == 0.0:
            continue
        row = 0.0
        for b in range(p):
            row += Q[a, b] * beta[b]
        quad += beta[a] * row
        lin += c[a] * beta[a] - pen[a] * fabs(beta[a])
    return 0.5 * quad - lin


cdef double _kkt(double[::1] grad, double[::1] pen, double[::1] beta):
    cdef Py_ssize_t a
    cdef double worst = 0.0, res
    for a in range(beta.shape[0]):
        if beta[a] > 0.0:
            res = fabs(grad[a] - pen[a])
        elif beta[a] < 0.0:
            res = fabs(grad[a] + pen[a])
        else:
            res = fabs(grad[a]) - pen[a]
            if res < 0.0:
                res = 0.0
        if res > worst:
            worst = res
    return worst


def shooting(Q_in, c_in, pen_in, beta0, double tol, Py_ssize_t max_iter):
    cdef double[:, ::1] Q = np.ascontiguousarray(Q_in, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef double[::1] pen = np.ascontiguousarray(pen_in, dtype=np.float64)
    beta_arr = np.array(beta0, dtype=np.float64)
    cdef double[::1] beta = beta_arr
    cdef Py_ssize_t p = beta.shape[0], a, b, sweeps = 0
    grad_arr = np.asarray(c_in, dtype=np.float64) - np.asarray(Q_in, dtype=np.float64) @ beta_arr
    cdef double[::1] grad = grad_arr
    cdef double qaa, z, new, step, kkt
    history = [_objective(Q, c, pen, beta)]
    kkt = _kkt(grad, pen, beta)
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
                # Q is symmetric: column a == row a
                for b in range(p):
                    grad[b] -= Q[a, b] * step
                beta[a] = new
        sweeps += 1
        history.append(_objective(Q, c, pen, beta))
        kkt = _kkt(grad, pen, beta)
    return beta_arr, sweeps, kkt, np.array(history)
