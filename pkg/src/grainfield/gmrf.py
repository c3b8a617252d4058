"""Gaussian Markov random fields over boundary neighborhood graphs.

The latent field on a boundary set has precision matrix

    Q[p, q] = theta * ( -1          if q is a within-grain neighbor of p,
                        -rho        if q is a between-grain neighbor of p,
                        K_p / kappa if q == p,
                        0           otherwise ),

with ``K_p = |wgn(p)| + rho * |bgn(p)|``.  ``kappa`` in (0, 1) controls the
conditional-to-marginal variance ratio, ``rho`` the coupling between copies
of a node in adjacent grains, and ``theta`` the overall precision scale.
``rho`` must stay above ``-min_p |wgn(p)| / |bgn(p)|`` so every ``K_p`` is
positive; positive definiteness over the rest of the box is enforced
operationally (factorization failures are treated as proposal rejections).
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr, ndtri

from .cholesky import SparseCholesky
from .errors import BoundViolationError

__all__ = [
    "FieldHyperparams", "PrecisionMatrix", "rho_bounds", "assemble_precision",
    "conditional_moments", "sample_gmrf", "log_density_gmrf",
    "transform", "untransform", "kappa_max_for_rho", "sample_admissible_hyperparams",
]

_WGN, _BGN, _DIAG = 0, 1, 2


@dataclass
class FieldHyperparams:
    """Hyperparameters of one latent boundary field."""

    nu: float       # field-level mean
    theta: float    # precision scale, > 0
    kappa: float    # conditional variance ratio, in (0, 1)
    rho: float      # between-grain coupling
    phi: float      # kernel decay rate (used by the design, carried here)

    def replace(self, **kw):
        return replace(self, **kw)


class _GraphPattern:
    """Fixed CSC pattern of Q for one graph, with entry classification."""

    def __init__(self, graph):
        dim = graph.dim
        indptr = np.zeros(dim + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(1 + graph.wgn_count + graph.bgn_count)
        nnz = int(indptr[-1])
        indices = np.empty(nnz, dtype=np.int64)
        kinds = np.empty(nnz, dtype=np.int8)
        for p in range(dim):
            merged = [(p, _DIAG)]
            merged.extend((int(q), _WGN) for q in graph.wgn(p))
            merged.extend((int(q), _BGN) for q in graph.bgn(p))
            merged.sort()
            lo = indptr[p]
            for off, (q, kind) in enumerate(merged):
                indices[lo + off] = q
                kinds[lo + off] = kind
        self.indptr = indptr
        self.indices = indices
        self.kinds = kinds
        self.wgn_mask = kinds == _WGN
        self.bgn_mask = kinds == _BGN
        self.diag_mask = kinds == _DIAG
        self.diag_rows = indices[self.diag_mask]
        # row index per adjacency entry, for vectorized neighbor sums
        self.wgn_rows = np.repeat(np.arange(dim, dtype=np.int64), graph.wgn_count)
        self.bgn_rows = np.repeat(np.arange(dim, dtype=np.int64), graph.bgn_count)


def _pattern(graph):
    pat = getattr(graph, "_q_pattern", None)
    if pat is None:
        pat = _GraphPattern(graph)
        graph._q_pattern = pat
    return pat


@dataclass
class PrecisionMatrix:
    """Assembled sparse precision with the graph and values that built it."""

    graph: object
    hp: FieldHyperparams
    matrix: sp.csc_matrix
    k_values: np.ndarray

    _factor: SparseCholesky = None

    @property
    def dim(self):
        return self.matrix.shape[0]

    def factor(self):
        """Cholesky factor of the matrix (cached)."""
        if self._factor is None or not self._factor._ok:
            self._factor = SparseCholesky(self.matrix)
        return self._factor


def rho_bounds(graph):
    """Admissible open interval for rho on this graph.

    The lower bound keeps every ``K_p`` positive; the upper bound is 1.
    Graphs without any between-grain pairs return ``(-inf, 1.0)``.
    """
    has_bgn = graph.bgn_count > 0
    if not np.any(has_bgn):
        return (-math.inf, 1.0)
    ratios = graph.wgn_count[has_bgn] / graph.bgn_count[has_bgn]
    return (-float(ratios.min()), 1.0)


def assemble_precision(graph, hp):
    """Build the sparse precision matrix for the given hyperparameters.

    Raises
    ------
    BoundViolationError
        theta, kappa or rho outside the admissible region.
    """
    theta, kappa, rho = float(hp.theta), float(hp.kappa), float(hp.rho)
    if not (math.isfinite(theta) and theta > 0.0):
        raise BoundViolationError(f"theta must be positive and finite, got {theta}")
    if not (0.0 < kappa < 1.0):
        raise BoundViolationError(f"kappa must lie strictly in (0, 1), got {kappa}")
    lo, hi = rho_bounds(graph)
    if not (lo < rho < hi):
        raise BoundViolationError(f"rho must lie in ({lo}, {hi}) for this graph, got {rho}")
    pat = _pattern(graph)
    k_values = graph.wgn_count + rho * graph.bgn_count
    if graph.dim and k_values.min() <= 0.0:
        raise BoundViolationError("nonpositive K_p; rho too negative for this graph")
    data = np.empty(pat.indices.shape[0], dtype=np.float64)
    data[pat.wgn_mask] = -theta
    data[pat.bgn_mask] = -theta * rho
    data[pat.diag_mask] = theta * k_values[pat.diag_rows] / kappa
    matrix = sp.csc_matrix((data, pat.indices, pat.indptr), shape=(graph.dim, graph.dim))
    matrix.has_sorted_indices = True
    return PrecisionMatrix(graph, hp, matrix, k_values)


def conditional_moments(prec, x, p=None):
    """Mean and variance of one site (or all sites) given the rest.

    Parameters
    ----------
    prec : PrecisionMatrix
    x : ndarray
        Current field values.
    p : int or None
        Site index; None returns vectors over all sites.

    Returns
    -------
    (mean, var)
        Conditional mean ``nu + (kappa / K_p) * (sum_wgn (x_q - nu)
        + rho * sum_bgn (x_q - nu))`` and variance ``kappa / (theta K_p)``.
    """
    graph = prec.graph
    hp = prec.hp
    pat = _pattern(graph)
    xc = np.asarray(x, dtype=np.float64) - hp.nu
    if p is None:
        s_w = np.bincount(pat.wgn_rows, weights=xc[graph.wgn_indices], minlength=graph.dim)
        s_b = np.bincount(pat.bgn_rows, weights=xc[graph.bgn_indices], minlength=graph.dim)
        mean = hp.nu + (hp.kappa / prec.k_values) * (s_w + hp.rho * s_b)
        var = hp.kappa / (hp.theta * prec.k_values)
        return mean, var
    s_w = float(xc[graph.wgn(p)].sum())
    s_b = float(xc[graph.bgn(p)].sum())
    kp = float(prec.k_values[p])
    mean = hp.nu + (hp.kappa / kp) * (s_w + hp.rho * s_b)
    return mean, hp.kappa / (hp.theta * kp)


def sample_gmrf(prec, mean, rng):
    """Draw one field realization with the given mean and precision."""
    z = rng.standard_normal(prec.dim)
    offset = prec.factor().sample_offset(z)
    return np.asarray(mean, dtype=np.float64) + offset


def log_density_gmrf(prec, mean, x):
    """Full multivariate normal log density (constants included)."""
    d = np.asarray(x, dtype=np.float64) - mean
    quad = float(d @ (prec.matrix @ d))
    return 0.5 * prec.factor().log_det - 0.5 * quad - 0.5 * prec.dim * math.log(2.0 * math.pi)


def transform(hp, rho_lower=-0.4):
    """Map (phi, theta, kappa, rho) to an unconstrained 4-vector.

    Components: ``ln phi``, ``ln(theta / kappa)``, probit of kappa, and
    probit of rho rescaled from ``(rho_lower, 1)`` to (0, 1).
    """
    span = 1.0 - rho_lower
    return np.array([
        math.log(hp.phi),
        math.log(hp.theta / hp.kappa),
        ndtri(hp.kappa),
        ndtri((hp.rho - rho_lower) / span),
    ])


def untransform(alpha, nu, rho_lower=-0.4):
    """Inverse of :func:`transform`; ``nu`` is carried through unchanged."""
    phi = math.exp(alpha[0])
    kappa = float(ndtr(alpha[2]))
    theta = kappa * math.exp(alpha[1])
    rho = rho_lower + (1.0 - rho_lower) * float(ndtr(alpha[3]))
    return FieldHyperparams(nu=nu, theta=theta, kappa=kappa, rho=rho, phi=phi)


def kappa_max_for_rho(graph, rho):
    """Largest kappa with guaranteed strict diagonal dominance at this rho.

    For ``rho >= 0`` the whole (0, 1) range is admissible.  For negative rho
    the diagonal shrinks while off-diagonal magnitudes grow, and dominance
    requires ``kappa < min_p (a_p + rho b_p) / (a_p - rho b_p)`` over sites
    with between-grain neighbors.
    """
    if rho >= 0.0:
        return 1.0
    has_bgn = graph.bgn_count > 0
    if not np.any(has_bgn):
        return 1.0
    a = graph.wgn_count[has_bgn].astype(np.float64)
    b = graph.bgn_count[has_bgn].astype(np.float64)
    ratios = (a + rho * b) / (a - rho * b)
    return float(max(ratios.min(), 0.0))


def sample_admissible_hyperparams(graph, rng, theta_range=(0.1, 10.0), phi_range=(0.3, 3.0)):
    """Random hyperparameters inside the provably positive-definite region.

    Samples rho within the graph's bounds, then kappa below the diagonal
    dominance ceiling for that rho (strict dominance with a positive diagonal
    implies positive definiteness).  Used by validity tests; the sampler
    itself explores the full prior support and relies on factorization
    failures being treated as rejections.
    """
    lo, hi = rho_bounds(graph)
    lo_eff = lo if math.isfinite(lo) else -1.0
    rho = lo_eff + (hi - lo_eff) * rng.uniform(0.02, 0.98)
    kmax = kappa_max_for_rho(graph, rho)
    if kmax <= 0.0:
        raise BoundViolationError("no admissible kappa at sampled rho")
    kappa = kmax * rng.uniform(0.05, 0.95)
    theta = math.exp(rng.uniform(math.log(theta_range[0]), math.log(theta_range[1])))
    phi = math.exp(rng.uniform(math.log(phi_range[0]), math.log(phi_range[1])))
    nu = float(rng.normal(0.0, 1.0))
    return FieldHyperparams(nu=nu, theta=theta, kappa=kappa, rho=rho, phi=phi)
