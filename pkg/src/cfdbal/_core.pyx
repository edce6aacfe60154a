# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pairwise distances and the ADMM inner loop.

Mirrors ``_core_py`` function for function. Both modules must agree to
floating-point rounding; ``tests/test_backends.py`` holds them to it.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from scipy.linalg.cython_blas cimport dgemv, dsymv

cnp.import_array()

BACKEND = "compiled"


def cross_sqeuclidean(const double[:, ::1] X, const double[:, ::1] Y):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] D = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - Y[j, k]
                    acc = acc + diff * diff
                D[i, j] = acc
    return out


def cross_cityblock(const double[:, ::1] X, const double[:, ::1] Y):
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] D = out
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    acc = acc + fabs(X[i, k] - Y[j, k])
                D[i, j] = acc
    return out


def pairwise_sqeuclidean(const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] D = out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - X[j, k]
                    acc = acc + diff * diff
                D[i, j] = acc
                D[j, i] = acc
    return out


def pairwise_cityblock(const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] D = out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    acc = acc + fabs(X[i, k] - X[j, k])
                D[i, j] = acc
                D[j, i] = acc
    return out


cdef inline double _clip(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def admm_run(
    const double[:, ::1] Minv,
    const double[:, ::1] A,
    const double[::1] q,
    const double[::1] lA,
    const double[::1] uA,
    const double[::1] lB,
    const double[::1] uB,
    double rho_a,
    double rho_b,
    double sigma,
    double alpha,
    double[::1] x,
    double[::1] zA,
    double[::1] zB,
    double[::1] yA,
    double[::1] yB,
    double[::1] dyA,
    double[::1] dyB,
    int n_iter,
):
    """Run ``n_iter`` relaxed ADMM iterations in place.

    The splitting is over ``[A; I] x = z`` with ``lA <= zA <= uA`` and
    ``lB <= zB <= uB``. ``Minv`` is the inverse of
    ``P + sigma I + rho_b I + rho_a A^T A``. On return ``dyA``/``dyB`` hold the
    dual increment of the last iteration.
    """
    cdef int n = <int>x.shape[0]
    cdef int m = <int>zA.shape[0]
    cdef int one = 1, it, i, j
    cdef double d_one = 1.0, d_zero = 0.0, r, znew, ynew
    cdef char trans_n = b'N'
    cdef char trans_t = b'T'
    cdef char uplo = b'U'
    rhs_arr = np.empty(n, dtype=np.float64)
    xt_arr = np.empty(n, dtype=np.float64)
    tA_arr = np.empty(max(m, 1), dtype=np.float64)
    ztA_arr = np.empty(max(m, 1), dtype=np.float64)
    cdef double[::1] rhs = rhs_arr
    cdef double[::1] xt = xt_arr
    cdef double[::1] tA = tA_arr
    cdef double[::1] ztA = ztA_arr
    if n == 0:
        return
    with nogil:
        for it in range(n_iter):
            for i in range(n):
                rhs[i] = sigma * x[i] - q[i] + rho_b * zB[i] - yB[i]
            if m > 0:
                for j in range(m):
                    tA[j] = rho_a * zA[j] - yA[j]
                # rhs += A^T tA  (A is row-major m x n == column-major n x m)
                dgemv(&trans_n, &n, &m, &d_one, <double*>&A[0, 0], &n,
                      &tA[0], &one, &d_one, &rhs[0], &one)
            dsymv(&uplo, &n, &d_one, <double*>&Minv[0, 0], &n,
                  &rhs[0], &one, &d_zero, &xt[0], &one)
            if m > 0:
                dgemv(&trans_t, &n, &m, &d_one, <double*>&A[0, 0], &n,
                      &xt[0], &one, &d_zero, &ztA[0], &one)
            for i in range(n):
                x[i] = alpha * xt[i] + (1.0 - alpha) * x[i]
            for j in range(m):
                r = alpha * ztA[j] + (1.0 - alpha) * zA[j]
                znew = _clip(r + yA[j] / rho_a, lA[j], uA[j])
                ynew = yA[j] + rho_a * (r - znew)
                dyA[j] = ynew - yA[j]
                yA[j] = ynew
                zA[j] = znew
            for i in range(n):
                r = alpha * xt[i] + (1.0 - alpha) * zB[i]
                znew = _clip(r + yB[i] / rho_b, lB[i], uB[i])
                ynew = yB[i] + rho_b * (r - znew)
                dyB[i] = ynew - yB[i]
                yB[i] = ynew
                zB[i] = znew
