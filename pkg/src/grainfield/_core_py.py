"""Pure-Python twin of the compiled kernels in ``_core``.

Same call signatures, same operation order, so results agree with the
extension to floating-point reproducibility (exactly for the factorization
and solves, to rounding of ``exp`` for the kernel fill).  Used when the
extension was not built; selected in :mod:`grainfield.core`.
"""

import numpy as np


def chol_refactor(Ap, Ai, Ax, Lp, Li, Lx, rp_ptr, rp_idx, x):
    """Up-looking Cholesky numeric pass on a fixed symbolic pattern.

    Returns -1 on success, or the (permuted) row index of the first
    non-positive pivot.  ``x`` is scratch and must be zero on entry; it is
    zero again on exit.
    """
    n = Ap.shape[0] - 1
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            x[Ai[p]] = Ax[p]
        d = x[k]
        x[k] = 0.0
        for q in range(rp_ptr[k], rp_ptr[k + 1]):
            j = rp_idx[q]
            lkj = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            start = Lp[j] + 1
            stop = start + np.searchsorted(Li[start:Lp[j + 1]], k)
            rows = Li[start:stop]
            x[rows] -= Lx[start:stop] * lkj
            Lx[stop] = lkj
            d -= lkj * lkj
        if d <= 0.0:
            return k
        Lx[Lp[k]] = np.sqrt(d)
    return -1


def lower_solve(Lp, Li, Lx, b):
    """Solve L y = b in place for lower-triangular CSC L (diagonal first)."""
    n = Lp.shape[0] - 1
    for j in range(n):
        bj = b[j] / Lx[Lp[j]]
        b[j] = bj
        lo, hi = Lp[j] + 1, Lp[j + 1]
        if hi > lo:
            b[Li[lo:hi]] -= Lx[lo:hi] * bj


def lower_transpose_solve(Lp, Li, Lx, b):
    """Solve L' y = b in place for lower-triangular CSC L (diagonal first)."""
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        lo, hi = Lp[j] + 1, Lp[j + 1]
        s = b[j]
        if hi > lo:
            s -= np.dot(Lx[lo:hi], b[Li[lo:hi]])
        b[j] = s / Lx[Lp[j]]


def exp_scale(D, w, phi, out):
    """Fill ``out[i, j] = exp(-phi * D[i, j]) * w[j]``."""
    np.multiply(D, -phi, out=out)
    np.exp(out, out=out)
    out *= w
