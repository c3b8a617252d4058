# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels.

Hot loops only: the up-looking sparse Cholesky numeric pass, the two
triangular solves it needs, and the exponential kernel fill for the design
matrices.  Everything else stays in numpy.  A pure-Python twin lives in
``_core_py``; keep both in sync.
"""

from libc.math cimport exp, sqrt


def chol_refactor(const long long[::1] Ap, const long long[::1] Ai, const double[::1] Ax,
                  const long long[::1] Lp, const long long[::1] Li, double[::1] Lx,
                  const long long[::1] rp_ptr, const long long[::1] rp_idx,
                  double[::1] x):
    """Up-looking Cholesky numeric pass on a fixed symbolic pattern.

    Returns -1 on success, or the (permuted) row index of the first
    non-positive pivot.  ``x`` is scratch, zero on entry and on exit.
    """
    cdef Py_ssize_t n = Ap.shape[0] - 1
    cdef Py_ssize_t k, p, q, j
    cdef double d, lkj
    with nogil:
        for k in range(n):
            for p in range(Ap[k], Ap[k + 1]):
                x[Ai[p]] = Ax[p]
            d = x[k]
            x[k] = 0.0
            for q in range(rp_ptr[k], rp_ptr[k + 1]):
                j = rp_idx[q]
                lkj = x[j] / Lx[Lp[j]]
                x[j] = 0.0
                p = Lp[j] + 1
                while Li[p] < k:
                    x[Li[p]] -= Lx[p] * lkj
                    p += 1
                Lx[p] = lkj
                d -= lkj * lkj
            if d <= 0.0:
                return k
            Lx[Lp[k]] = sqrt(d)
    return -1


def lower_solve(const long long[::1] Lp, const long long[::1] Li, const double[::1] Lx,
                double[::1] b):
    """Solve L y = b in place for lower-triangular CSC L (diagonal first)."""
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, p
    cdef double bj
    with nogil:
        for j in range(n):
            bj = b[j] / Lx[Lp[j]]
            b[j] = bj
            for p in range(Lp[j] + 1, Lp[j + 1]):
                b[Li[p]] -= Lx[p] * bj


def lower_transpose_solve(const long long[::1] Lp, const long long[::1] Li,
                          const double[::1] Lx, double[::1] b):
    """Solve L' y = b in place for lower-triangular CSC L (diagonal first)."""
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j, p
    cdef double s
    with nogil:
        for j in range(n - 1, -1, -1):
            s = b[j]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                s -= Lx[p] * b[Li[p]]
            b[j] = s / Lx[Lp[j]]


def exp_scale(const double[:, ::1] D, const double[::1] w, double phi, double[:, ::1] out):
    """Fill ``out[i, j] = exp(-phi * D[i, j]) * w[j]``."""
    cdef Py_ssize_t m = D.shape[0]
    cdef Py_ssize_t n = D.shape[1]
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                out[i, j] = exp(-phi * D[i, j]) * w[j]
