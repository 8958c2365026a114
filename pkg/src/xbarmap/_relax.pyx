# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled line-relaxation kernel; same contract as ``_relax_py.relax_solve``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef void _factor_line(const double* diag, double* cp, double* inv, Py_ssize_t n,
                       Py_ssize_t stride, double g) noexcept nogil:
    cdef Py_ssize_t k
    inv[0] = 1.0 / diag[0]
    cp[0] = -g * inv[0]
    for k in range(1, n):
        inv[k * stride] = 1.0 / (diag[k * stride] + g * cp[(k - 1) * stride])
        cp[k * stride] = -g * inv[k * stride]


def relax_solve(v, gc, double g_line, double tol, int max_iter):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] va = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] ga = np.ascontiguousarray(gc, dtype=np.float64)
    cdef Py_ssize_t nb = ga.shape[0], rows = ga.shape[1], cols = ga.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] vb = np.zeros((nb, rows, cols))
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] vs = np.zeros((nb, rows, cols))
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] cp_b = np.empty((rows, cols))
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] inv_b = np.empty((rows, cols))
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] cp_s = np.empty((rows, cols))
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] inv_s = np.empty((rows, cols))
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] diag = np.empty((rows, cols))
    cdef double[::1] d = np.empty(max(rows, cols))
    cdef double[::1] prev = np.empty(cols)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] iters = np.full(nb, -1, dtype=np.int64)
    cdef Py_ssize_t s, i, j, it
    cdef double g = g_line, delta, peak, foot, x
    cdef double* G
    cdef double* VB
    cdef double* VS

    for s in range(nb):
        G = &ga[s, 0, 0]
        VB = &vb[s, 0, 0]
        VS = &vs[s, 0, 0]
        with nogil:
            # bit-line factors, swept along columns
            for i in range(rows):
                for j in range(cols):
                    diag[i, j] = G[i * cols + j] + 2.0 * g
                diag[i, cols - 1] -= g
                _factor_line(&diag[i, 0], &cp_b[i, 0], &inv_b[i, 0], cols, 1, g)
            # source-line factors, swept along rows
            for j in range(cols):
                for i in range(rows):
                    diag[i, j] = G[i * cols + j] + 2.0 * g
                diag[0, j] -= g
                _factor_line(&diag[0, j], &cp_s[0, j], &inv_s[0, j], rows, cols, g)
            for j in range(cols):
                prev[j] = 0.0

            for it in range(1, max_iter + 1):
                for i in range(rows):
                    d[0] = (G[i * cols] * VS[i * cols] + g * va[s, i]) * inv_b[i, 0]
                    for j in range(1, cols):
                        d[j] = (G[i * cols + j] * VS[i * cols + j] + g * d[j - 1]) * inv_b[i, j]
                    VB[i * cols + cols - 1] = d[cols - 1]
                    for j in range(cols - 2, -1, -1):
                        VB[i * cols + j] = d[j] - cp_b[i, j] * VB[i * cols + j + 1]
                for j in range(cols):
                    d[0] = G[j] * VB[j] * inv_s[0, j]
                    for i in range(1, rows):
                        d[i] = (G[i * cols + j] * VB[i * cols + j] + g * d[i - 1]) * inv_s[i, j]
                    VS[(rows - 1) * cols + j] = d[rows - 1]
                    for i in range(rows - 2, -1, -1):
                        VS[i * cols + j] = d[i] - cp_s[i, j] * VS[(i + 1) * cols + j]
                delta = 0.0
                peak = 0.0
                for j in range(cols):
                    foot = VS[(rows - 1) * cols + j]
                    x = fabs(foot - prev[j])
                    if x > delta:
                        delta = x
                    if fabs(foot) > peak:
                        peak = fabs(foot)
                    prev[j] = foot
                if delta <= tol * peak or delta == 0.0:
                    break
            else:
                it = -1
        iters[s] = it
    return vb, vs, iters
