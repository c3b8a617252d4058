"""Sparse Cholesky factorization with reusable symbolic analysis.

scipy has no sparse Cholesky, and the sampler needs the log-determinant of a
sparse precision matrix whose pattern is fixed while its values change every
proposal.  So the symbolic work (fill-reducing ordering, elimination tree,
row patterns, factor structure) is done once per pattern here, and each
numeric refactorization is a single pass through the compiled kernel.

The algorithm is the classic up-looking factorization: for each row k of L,
the nonzero pattern is the reach of A[:, k] in the elimination tree, and the
row is obtained from one sparse triangular solve against the rows computed
before it.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import core
from .errors import NotPositiveDefiniteError

__all__ = ["SparseCholesky"]


def _elimination_tree(n, Ap, Ai):
    """Parent array of the elimination tree of an upper-triangular pattern."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent

def _row_patterns(n, Ap, Ai, parent):
    """Topologically ordered column pattern of each row of L.

    Row k's pattern is the union of the paths from the nonzero rows of
    A[:, k] up the elimination tree, stopping below k.  The returned order
    puts every column after all of its etree descendants, which is what the
    numeric triangular solve needs.
    """
    stamp = np.full(n, -1, dtype=np.int64)
    climb = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    parts = []
    for k in range(n):
        stamp[k] = k
        top = n
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i >= k:
                continue
            length = 0
            while stamp[i] != k:
                climb[length] = i
                length += 1
                stamp[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                stack[top] = climb[length]
        parts.append(stack[top:n].copy())
    rp_ptr = np.zeros(n + 1, dtype=np.int64)
    if n:
        rp_ptr[1:] = np.cumsum([len(q) for q in parts])
    rp_idx = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    return rp_ptr, rp_idx.astype(np.int64)


class SparseCholesky:
    """Cholesky factor of a sparse SPD matrix, P A P' = L L'.

    Parameters
    ----------
    matrix : scipy sparse matrix
        Defines the sparsity pattern (and, via :meth:`refactor`, the first
        set of values).  Must be structurally symmetric with a full diagonal.
    order : {"rcm", "natural"}
        Fill-reducing ordering.  Reverse Cuthill-McKee by default.
    factor : bool
        When False, only the symbolic analysis is performed; call
        :meth:`refactor` before using the factor.  Lets proposal loops keep
        the symbolic work even when a particular set of values fails.

    Raises
    ------
    NotPositiveDefiniteError
        From :meth:`refactor` when a pivot is not strictly positive.  The
        factor is unusable until a later refactorization succeeds.
    """

    def __init__(self, matrix, order="rcm", factor=True):
        A = sp.csc_matrix(matrix)
        A.sum_duplicates()
        A.sort_indices()
        n = A.shape[0]
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = n
        self._pattern_nnz = A.nnz

        if order == "rcm" and n > 1 and A.nnz > n:
            perm = np.asarray(reverse_cuthill_mckee(A.tocsr(), symmetric_mode=True), dtype=np.int64)
        elif order in ("rcm", "natural"):
            perm = np.arange(n, dtype=np.int64)
        else:
            raise ValueError(f"unknown ordering {order!r}")
        self.perm = perm
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n, dtype=np.int64)

        # Permuted upper triangle, with data carrying source positions into
        # the canonical CSC data array so refactor() is a single gather.
        coo = A.tocoo()
        pr, pc = inv[coo.row], inv[coo.col]
        keep = pr <= pc
        upper = sp.csc_matrix(
            (np.arange(A.nnz, dtype=np.int64)[keep], (pr[keep], pc[keep])), shape=(n, n)
        )
        upper.sort_indices()
        self._Ap = upper.indptr.astype(np.int64)
        self._Ai = upper.indices.astype(np.int64)
        self._src = upper.data.astype(np.int64)
        diag_ok = n == 0 or np.all(self._Ai[self._Ap[1:] - 1] == np.arange(n))
        if not diag_ok:
            raise ValueError("matrix pattern must include every diagonal entry")

        parent = _elimination_tree(n, self._Ap, self._Ai)
        self._rp_ptr, self._rp_idx = _row_patterns(n, self._Ap, self._Ai, parent)

        counts = np.bincount(self._rp_idx, minlength=n).astype(np.int64) + 1
        self._Lp = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=self._Lp[1:])
        Li = np.empty(self._Lp[n], dtype=np.int64)
        Li[self._Lp[:-1]] = np.arange(n)
        nxt = self._Lp[:-1] + 1
        for k in range(n):
            for j in self._rp_idx[self._rp_ptr[k]:self._rp_ptr[k + 1]]:
                Li[nxt[j]] = k
                nxt[j] += 1
        self._Li = Li
        self._Lx = np.zeros(self._Lp[n], dtype=np.float64)
        self._work = np.zeros(n, dtype=np.float64)
        self._ok = False
        if factor:
            self.refactor(A)

    @property
    def nnz_factor(self):
        return int(self._Lp[self.n])

    def refactor(self, matrix):
        """Recompute the numeric factor for new values on the same pattern."""
        if isinstance(matrix, sp.csc_matrix) and matrix.has_sorted_indices:
            A = matrix
        else:
            A = sp.csc_matrix(matrix)
            A.sum_duplicates()
            A.sort_indices()
        if A.nnz != self._pattern_nnz or A.shape[0] != self.n:
            raise ValueError("matrix does not match the analyzed pattern")
        self._ok = False
        fail = core.chol_refactor(
            self._Ap, self._Ai, A.data[self._src],
            self._Lp, self._Li, self._Lx,
            self._rp_ptr, self._rp_idx, self._work,
        )
        if fail >= 0:
            raise NotPositiveDefiniteError(f"non-positive pivot at permuted row {fail}")
        self._ok = True

    def _require_factor(self):
        if not self._ok:
            raise NotPositiveDefiniteError("no valid factorization available")

    @property
    def log_det(self):
        """Log-determinant of the factored matrix."""
        self._require_factor()
        if self.n == 0:
            return 0.0
        return 2.0 * float(np.log(self._Lx[self._Lp[:-1]]).sum())

    def solve(self, b):
        """Solve A x = b."""
        self._require_factor()
        u = np.asarray(b, dtype=np.float64)[self.perm].copy()
        core.lower_solve(self._Lp, self._Li, self._Lx, u)
        core.lower_transpose_solve(self._Lp, self._Li, self._Lx, u)
        out = np.empty(self.n, dtype=np.float64)
        out[self.perm] = u
        return out

    def sample_offset(self, z):
        """Map iid standard normals to a zero-mean draw with covariance A^{-1}."""
        self._require_factor()
        u = np.array(z, dtype=np.float64, copy=True)
        core.lower_transpose_solve(self._Lp, self._Li, self._Lx, u)
        out = np.empty(self.n, dtype=np.float64)
        out[self.perm] = u
        return out
