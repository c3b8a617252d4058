"""Metropolis-within-Gibbs sampler.

One sweep updates, in order: the second-order field jointly with its
hyperparameters, the third-order field likewise, the two field-level means,
the grain means with their hierarchy, the error scale and latent scales, and
the degrees of freedom.

The field move proposes new transformed hyperparameters, then redraws the
field subblock by subblock from its full conditionals under the proposal.
The reverse-move density evaluates the old subblocks under the mirrored
conditioning pattern (old blocks before s, proposed blocks after s, old
hyperparameters), giving the exact Metropolis-Hastings ratio for the
composite proposal: 2S conditional densities per move for S subblocks.
Residuals are maintained incrementally throughout; rejected proposals leave
every maintained quantity untouched.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.linalg import cho_solve, solve_triangular

from .design import apply_design, build_design, rebuild_for_phi
from .diagnostics import r2_adjusted
from .errors import BoundViolationError, NotPositiveDefiniteError
from .gmrf import (FieldHyperparams, _pattern, assemble_precision, transform, untransform)
from .mesh import build_neighborhoods, extract_boundaries
from .model import ModelState, PriorConfig, df_log_conditional, log_likelihood, log_prior_alpha
from .cholesky import SparseCholesky

logger = logging.getLogger(__name__)

__all__ = ["ChainConfig", "ChainResult", "make_subblocks", "SubblockView",
           "subblock_conditional", "FieldUpdater", "AdaptiveProposal",
           "gibbs_nu", "gibbs_grain_means", "gibbs_error_params", "metropolis_df",
           "init_state", "run_chain"]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ChainConfig:
    """Schedule and tuning constants of one chain."""

    adapt_blocks: int = 20
    adapt_block_size: int = 500
    burnin: int = 5000
    samples: int = 15000
    thin: int = 5
    target_accept: float = 0.234
    subblocks: object = "per-grain"      # "per-grain" or an int block size
    snapshot_stride: int = 25            # in retained samples
    audit_every: int = 0                 # residual audit period in sweeps (0 = off)
    audit_rtol: float = 1e-10
    init_prop_scale_field: float = 0.1
    init_prop_scale_df: float = 0.5
    adapt_gain: float = 1.0
    cache_distances: bool = True
    truncate_eps: float = 0.0


def make_subblocks(offsets, scheme):
    """Column ranges of the subblocks, in update order.

    "per-grain" uses one subblock per grain (empty grains skipped); an
    integer k chops the flat index range into consecutive blocks of size k.
    """
    dim = int(offsets[-1])
    if scheme == "per-grain":
        ranges = [(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:]) if b > a]
    elif isinstance(scheme, int):
        if scheme < 1:
            raise ValueError(f"subblock size must be >= 1, got {scheme}")
        ranges = [(lo, min(lo + scheme, dim)) for lo in range(0, dim, scheme)]
    else:
        raise ValueError(f"unknown subblock scheme {scheme!r}")
    return ranges


class SubblockView:
    """Precomputed index structures for one subblock of one field.

    Holds the per-grain pieces of the column range (rows never overlap
    between pieces, so the weighted cross product assembles block-wise) and
    the positions of the Q submatrix entries inside the fixed CSC pattern.
    """

    def __init__(self, design, pattern, lo, hi):
        self.lo, self.hi = lo, hi
        self.h = hi - lo
        self.pieces = []
        for gidx, blk in enumerate(design.blocks):
            c_lo, c_hi = max(lo, blk.col_lo), min(hi, blk.col_hi)
            if c_hi > c_lo:
                self.pieces.append((gidx, c_lo - blk.col_lo, c_hi - blk.col_lo,
                                    c_lo - lo, c_hi - lo))
        sl = slice(pattern.indptr[lo], pattern.indptr[hi])
        self._data_slice = sl
        rows = pattern.indices[sl]
        self._entry_rows = rows
        counts = np.diff(pattern.indptr[lo:hi + 1])
        self._entry_cols = np.repeat(np.arange(self.h, dtype=np.int64), counts)
        inside = (rows >= lo) & (rows < hi)
        self._ss_sel = inside
        self._ss_ii = rows[inside] - lo
        self._ss_jj = self._entry_cols[inside]

    def weighted_cross(self, design, w_inv):
        """Dense X_s' W X_s."""
        out = np.zeros((self.h, self.h))
        for gidx, c0, c1, s0, s1 in self.pieces:
            blk = design.blocks[gidx]
            V = blk.values[:, c0:c1]
            out[s0:s1, s0:s1] = V.T @ (V * w_inv[blk.rows][:, None])
        return out

    def weighted_rmatvec(self, design, w_inv, r):
        """X_s' (W r)."""
        out = np.zeros(self.h)
        for gidx, c0, c1, s0, s1 in self.pieces:
            blk = design.blocks[gidx]
            out[s0:s1] = blk.values[:, c0:c1].T @ (w_inv[blk.rows] * r[blk.rows])
        return out

    def add_matvec(self, design, out, coeffs_s, sign=1.0):
        """out += sign * X_s coeffs_s (scattered over this block's rows)."""
        for gidx, c0, c1, s0, s1 in self.pieces:
            blk = design.blocks[gidx]
            out[blk.rows] += sign * (blk.values[:, c0:c1] @ coeffs_s[s0:s1])

    def q_submatrix(self, qdata):
        """Dense Q[s, s] gathered from the assembled values."""
        out = np.zeros((self.h, self.h))
        out[self._ss_ii, self._ss_jj] = qdata[self._data_slice][self._ss_sel]
        return out

    def q_rowblock_matvec(self, qdata, v):
        """Q[s, :] v using the CSC column slice of the symmetric matrix."""
        contrib = qdata[self._data_slice] * v[self._entry_rows]
        return np.bincount(self._entry_cols, weights=contrib, minlength=self.h)


def subblock_conditional(view, design, w_inv, prec, nu, coeffs, r_plus_s):
    """Full conditional of one subblock given the rest of the field.

    Parameters
    ----------
    view : SubblockView
    design : KernelDesign
        Design evaluated at the conditioning hyperparameters' decay rate.
    w_inv : ndarray
        Per-element precisions ``1 / (sigma2 * omega)``.
    prec : PrecisionMatrix
        Field precision under the conditioning hyperparameters.
    nu : float
        Field-level mean.
    coeffs : ndarray
        Full field vector supplying the conditioning values outside the
        block (its values inside the block cancel algebraically).
    r_plus_s : ndarray
        Residual with this block's contribution added back, i.e.
        ``y - mu - X_{not s} coeffs_{not s} -`` (other field).

    Returns
    -------
    (cond_prec, mean, chol_lower)

    Raises
    ------
    NotPositiveDefiniteError
        If the conditional precision is not numerically positive definite.
    """
    qdata = prec.matrix.data
    qss = view.q_submatrix(qdata)
    cond_prec = view.weighted_cross(design, w_inv) + qss
    rhs = view.weighted_rmatvec(design, w_inv, r_plus_s)
    rhs -= view.q_rowblock_matvec(qdata, coeffs - nu)
    rhs += qss @ coeffs[view.lo:view.hi]
    try:
        chol = np.linalg.cholesky(cond_prec)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"subblock conditional not positive definite: {exc}") from exc
    mean = cho_solve((chol, True), rhs)
    return cond_prec, mean, chol


def _logdens_from_chol(x, mean, chol):
    """Normal log density with precision chol @ chol.T."""
    h = mean.shape[0]
    u = chol.T @ (x - mean)
    return -0.5 * h * _LOG_2PI + float(np.sum(np.log(np.diag(chol)))) - 0.5 * float(u @ u)


class AdaptiveProposal:
    """Random-walk proposal with blockwise scale and shape adaptation.

    The scale multiplier moves the acceptance rate toward the target; the
    shape matrix blends toward the sample covariance of the last block.
    """

    def __init__(self, dim, init_scale, target=0.234, gain=1.0):
        self.dim = dim
        self.target = target
        self.gain = gain
        self.log_lambda = 0.0
        self.shape = np.eye(dim) * float(init_scale) ** 2
        self._base = 2.38 ** 2 / dim if init_scale > 0 else 0.0
        self._recompute()

    def _recompute(self):
        cov = self._base * math.exp(2.0 * self.log_lambda) * self.shape
        if np.all(cov == 0.0):
            self.chol = np.zeros((self.dim, self.dim))
        else:
            self.chol = np.linalg.cholesky(cov)

    def propose_offset(self, rng):
        return self.chol @ rng.standard_normal(self.dim)

    def end_block(self, accept_rate, samples):
        """Adapt after a block: samples is the (n, dim) parameter history."""
        self.log_lambda += self.gain * (accept_rate - self.target)
        if samples is not None and len(samples) >= 10:
            arr = np.asarray(samples)
            cov = np.atleast_2d(np.cov(arr, rowvar=False))
            jitter = 1e-10 * max(float(np.trace(cov)) / self.dim, 1e-12)
            cand = 0.5 * self.shape + 0.5 * (cov + jitter * np.eye(self.dim))
            try:
                np.linalg.cholesky(cand)
                self.shape = cand
            except np.linalg.LinAlgError:
                pass
        self._recompute()


class FieldUpdater:
    """Joint update of one latent field and its transformed hyperparameters."""

    def __init__(self, name, graph, design, hp, priors, subblock_ranges,
                 init_prop_scale=0.1, target=0.234, gain=1.0):
        self.name = name
        self.graph = graph
        self.design = design
        self.priors = priors
        self.alpha = transform(hp, priors.rho_lower)
        # keep hyperparameters exactly on the transform's image so that a
        # zero proposal step reproduces them bit for bit
        self.hp = untransform(self.alpha, hp.nu, priors.rho_lower)
        self.prec = assemble_precision(graph, self.hp)
        self._factor = SparseCholesky(self.prec.matrix, factor=False)
        self._factor.refactor(self.prec.matrix)
        self.log_det = self._factor.log_det
        self.lp_alpha = log_prior_alpha(self.alpha, priors, name)
        pattern = _pattern(graph)
        self.views = [SubblockView(design, pattern, lo, hi) for lo, hi in subblock_ranges]
        self.proposal = AdaptiveProposal(4, init_prop_scale, target, gain)
        self.counters = {}
        self.phase = "adapt"
        self._block_hist = []
        self._block_accepts = 0
        self._block_n = 0
        self.density_evals = 0

    def _field(self, state):
        return state.beta if self.name == "beta" else state.gamma

    def _set_field(self, state, value, hp, resid):
        if self.name == "beta":
            state.beta = value
        else:
            state.gamma = value
        state.r = resid
        if self.name == "beta":
            state.hp_beta = hp
        else:
            state.hp_gamma = hp

    def _count(self, accepted):
        acc, tot = self.counters.get(self.phase, (0, 0))
        self.counters[self.phase] = (acc + int(accepted), tot + 1)
        self._block_accepts += int(accepted)
        self._block_n += 1
        self._block_hist.append(self.alpha.copy())

    def acceptance_rate(self, phase):
        acc, tot = self.counters.get(phase, (0, 0))
        return acc / tot if tot else math.nan

    def finish_block(self):
        rate = self._block_accepts / self._block_n if self._block_n else 0.0
        self.proposal.end_block(rate, self._block_hist)
        self._block_hist = []
        self._block_accepts = 0
        self._block_n = 0

    def step(self, state, w_inv, rng):
        """One joint field move; returns True when accepted."""
        nu = self.hp.nu
        alpha_star = self.alpha + self.proposal.propose_offset(rng)
        lp_alpha_star = log_prior_alpha(alpha_star, self.priors, self.name)
        if not math.isfinite(lp_alpha_star):
            self._count(False)
            return False
        hp_star = untransform(alpha_star, nu, self.priors.rho_lower)
        try:
            prec_star = assemble_precision(self.graph, hp_star)
            self._factor.refactor(prec_star.matrix)
            log_det_star = self._factor.log_det
        except (BoundViolationError, NotPositiveDefiniteError):
            self._count(False)
            return False
        design_star = rebuild_for_phi(self.design, hp_star.phi)

        coeffs_old = self._field(state)
        contrib_old = apply_design(self.design, coeffs_old)

        # Forward pass: redraw each subblock from its conditional under the
        # proposal, keeping the working residual in sync.
        coeffs_prop = coeffs_old.copy()
        r_work = state.r + contrib_old
        apply_design(design_star, coeffs_old, out=r_work, sign=-1.0)
        log_q_fwd = 0.0
        try:
            for view in self.views:
                r_s = r_work.copy()
                view.add_matvec(design_star, r_s, coeffs_prop[view.lo:view.hi])
                _, mean, chol = subblock_conditional(
                    view, design_star, w_inv, prec_star, nu, coeffs_prop, r_s)
                z = rng.standard_normal(view.h)
                draw = mean + solve_triangular(chol, z, trans="T", lower=True)
                log_q_fwd += -0.5 * view.h * _LOG_2PI + float(np.sum(np.log(np.diag(chol)))) \
                    - 0.5 * float(z @ z)
                coeffs_prop[view.lo:view.hi] = draw
                r_work = r_s
                view.add_matvec(design_star, r_work, draw, sign=-1.0)
        except NotPositiveDefiniteError:
            self._count(False)
            return False
        r_star = r_work

        # Reverse pass: density of the old blocks under the mirrored
        # conditioning pattern and the old hyperparameters.
        log_q_rev = 0.0
        coeffs_mix = coeffs_prop.copy()
        r_rev = state.r + contrib_old
        apply_design(self.design, coeffs_prop, out=r_rev, sign=-1.0)
        try:
            for view in self.views:
                r_s = r_rev.copy()
                view.add_matvec(self.design, r_s, coeffs_mix[view.lo:view.hi])
                _, mean, chol = subblock_conditional(
                    view, self.design, w_inv, self.prec, nu, coeffs_mix, r_s)
                old_s = coeffs_old[view.lo:view.hi]
                log_q_rev += _logdens_from_chol(old_s, mean, chol)
                coeffs_mix[view.lo:view.hi] = old_s
                r_rev = r_s
                view.add_matvec(self.design, r_rev, old_s, sign=-1.0)
        except NotPositiveDefiniteError:
            self._count(False)
            return False
        self.density_evals += 2 * len(self.views)

        # Likelihood difference: sigma2 and omega are unchanged within the
        # move, so the log-determinant terms cancel exactly.
        d_loglik = -0.5 * float(np.dot(w_inv, r_star**2 - state.r**2))
        c_old = coeffs_old - nu
        c_star = coeffs_prop - nu
        quad_old = float(c_old @ (self.prec.matrix @ c_old))
        quad_star = float(c_star @ (prec_star.matrix @ c_star))
        d_field_prior = 0.5 * (log_det_star - self.log_det) - 0.5 * (quad_star - quad_old)
        log_ratio = (d_loglik + d_field_prior + (lp_alpha_star - self.lp_alpha)
                     + log_q_rev - log_q_fwd)

        accepted = math.log(rng.uniform()) < log_ratio
        if accepted:
            self.alpha = alpha_star
            self.hp = hp_star
            self.prec = prec_star
            self.log_det = log_det_star
            self.lp_alpha = lp_alpha_star
            self.design = design_star
            self._set_field(state, coeffs_prop, hp_star, r_star)
        self._count(accepted)
        return accepted


def gibbs_nu(state, which, prec, priors, rng):
    """Conjugate draw of one field-level mean."""
    x = state.beta if which == "beta" else state.gamma
    q1 = np.asarray(prec.matrix.sum(axis=0)).ravel()
    prior_prec = 1.0 / priors.nu_sd**2
    post_prec = float(q1.sum()) + prior_prec
    post_mean = (float(q1 @ x) + priors.nu_mean * prior_prec) / post_prec
    nu = post_mean + math.sqrt(1.0 / post_prec) * rng.standard_normal()
    if which == "beta":
        state.hp_beta = replace(state.hp_beta, nu=nu)
    else:
        state.hp_gamma = replace(state.hp_gamma, nu=nu)
    return nu


def gibbs_grain_means(state, grain_index, priors, rng):
    """Conjugate draws of grain means, the grand mean and their variance.

    The maintained residual includes the grain means, so they are added back
    per grain before drawing and the residual is updated in place after.
    """
    G = state.mu_g.shape[0]
    w_inv = 1.0 / (state.sigma2 * state.omega)
    sums_w = np.bincount(grain_index, weights=w_inv, minlength=G)
    partial = state.r + state.mu_g[grain_index]
    sums_wr = np.bincount(grain_index, weights=w_inv * partial, minlength=G)
    post_prec = sums_w + 1.0 / state.tau2
    post_mean = (sums_wr + state.mu / state.tau2) / post_prec
    new_mu_g = post_mean + rng.standard_normal(G) / np.sqrt(post_prec)
    state.r += (state.mu_g - new_mu_g)[grain_index]
    state.mu_g = new_mu_g

    var = 1.0 / (G / state.tau2 + 1.0 / priors.mu_sd**2)
    mean = (state.mu_g.sum() / state.tau2 + priors.mu_mean / priors.mu_sd**2) * var
    state.mu = mean + math.sqrt(var) * rng.standard_normal()

    shape = G / 2.0 + priors.tau2_shape
    scale = 0.5 * float(np.sum((state.mu_g - state.mu)**2)) + priors.tau2_scale
    state.tau2 = scale / rng.standard_gamma(shape)


def gibbs_error_params(state, priors, rng):
    """Conjugate draws of the error scale and the latent per-element scales."""
    m = state.r.shape[0]
    shape = m / 2.0 + priors.sigma2_shape
    scale = 0.5 * float(np.sum(state.r**2 / state.omega)) + priors.sigma2_scale
    state.sigma2 = scale / rng.standard_gamma(shape)
    w_shape = 0.5 + state.df / 2.0
    w_scale = state.r**2 / (2.0 * state.sigma2) + state.df / 2.0
    state.omega = w_scale / rng.standard_gamma(w_shape, size=m)


def metropolis_df(state, priors, proposal, rng):
    """Log-scale random-walk move of the degrees of freedom."""
    x = math.log(state.df)
    x_star = x + float(proposal.propose_offset(rng)[0])
    df_star = math.exp(x_star)
    ll_star = df_log_conditional(df_star, state.omega, priors.df_min, priors.df_max)
    if not math.isfinite(ll_star):
        return False
    ll_old = df_log_conditional(state.df, state.omega, priors.df_min, priors.df_max)
    log_ratio = ll_star - ll_old + (x_star - x)
    accepted = math.log(rng.uniform()) < log_ratio
    if accepted:
        state.df = df_star
    return accepted


@dataclass
class ChainResult:
    """Retained draws plus bookkeeping of one chain run."""

    columns: list
    scalars: np.ndarray
    beta_snapshots: np.ndarray
    gamma_snapshots: np.ndarray
    snapshot_iters: np.ndarray
    acceptance: dict
    mean_fitted: np.ndarray
    mean_beta: np.ndarray
    mean_gamma: np.ndarray
    final_state: ModelState
    audit: dict
    timings: dict
    seed: object = None

    def column(self, name):
        return self.scalars[:, self.columns.index(name)]


def _field_summary(x):
    if x.shape[0] == 0:
        return math.nan, math.nan
    return float(x.mean()), float(x.std())


def init_state(mesh, y, priors, hp_beta=None, hp_gamma=None):
    """Initial parameter state: grain means from the data, fields at zero.

    The error scale starts at the pooled within-grain residual variance, the
    latent scales at one, the degrees of freedom at 5, and the field
    hyperparameters at their prior medians except theta, which starts at 1
    because the vague gamma prior's median is numerically zero.
    """
    gidx = mesh.grain_of_element - 1
    counts = np.bincount(gidx, minlength=mesh.n_grains)
    mu_g = np.bincount(gidx, weights=y, minlength=mesh.n_grains) / counts
    r = y - mu_g[gidx]
    sigma2 = float(np.var(r))
    if sigma2 <= 0.0:
        sigma2 = 1.0
    tau2 = float(np.var(mu_g, ddof=1)) if mesh.n_grains > 1 else 1.0
    if tau2 <= 0.0:
        tau2 = 1.0
    kappa0 = float(stats.beta.median(priors.kappa_a, priors.kappa_b))
    rho0 = priors.rho_lower + (1.0 - priors.rho_lower) / 2.0
    if hp_beta is None:
        hp_beta = FieldHyperparams(nu=priors.nu_mean, theta=1.0, kappa=kappa0, rho=rho0,
                                   phi=math.exp(priors.phi_beta_meanlog))
    if hp_gamma is None:
        hp_gamma = FieldHyperparams(nu=priors.nu_mean, theta=1.0, kappa=kappa0, rho=rho0,
                                    phi=math.exp(priors.phi_gamma_meanlog))
    return ModelState(
        mu_g=mu_g, mu=float(y.mean()), tau2=tau2,
        beta=None, gamma=None, hp_beta=hp_beta, hp_gamma=hp_gamma,
        sigma2=sigma2, omega=np.ones(mesh.n_elements), df=5.0, r=r)


def run_chain(mesh, y, priors=None, cfg=None, rng=None, boundaries=None):
    """Run the full sampler on one dataset.

    Parameters
    ----------
    mesh : GrainMesh
    y : ndarray
        Observations in element order.
    priors : PriorConfig
        ``mu_mean`` is filled with the data mean when unset.
    cfg : ChainConfig
    rng : numpy.random.Generator
        From :func:`grainfield.rng.make_rng`; seeds are the caller's concern.
    boundaries : BoundaryGeometry, optional
        Reuse of precomputed boundary geometry.

    Returns
    -------
    ChainResult
    """
    t_start = time.perf_counter()
    priors = priors or PriorConfig()
    cfg = cfg or ChainConfig()
    if rng is None:
        raise ValueError("run_chain requires an explicit Generator")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (mesh.n_elements,):
        raise ValueError(f"y must have one value per element, got {y.shape}")
    if priors.mu_mean is None:
        priors = replace(priors, mu_mean=float(y.mean()))

    bg = boundaries if boundaries is not None else extract_boundaries(mesh)
    graph_b = build_neighborhoods(mesh, bg.second_order, bg.grain_neighbors)
    graph_c = build_neighborhoods(mesh, bg.third_order, bg.grain_neighbors)
    gidx = mesh.grain_of_element - 1

    state = init_state(mesh, y, priors)
    state.beta = np.zeros(bg.second_order.dim)
    state.gamma = np.zeros(bg.third_order.dim)

    cent = mesh.nodes[mesh.elements].mean(axis=1)
    design_b = build_design(mesh, bg.second_order, state.hp_beta.phi, centroids=cent,
                            cache_distances=cfg.cache_distances, truncate_eps=cfg.truncate_eps)
    design_c = build_design(mesh, bg.third_order, state.hp_gamma.phi, centroids=cent,
                            cache_distances=cfg.cache_distances, truncate_eps=cfg.truncate_eps)

    upd_b = FieldUpdater("beta", graph_b, design_b, state.hp_beta, priors,
                         make_subblocks(bg.second_order.offsets, cfg.subblocks),
                         cfg.init_prop_scale_field, cfg.target_accept, cfg.adapt_gain)
    upd_c = FieldUpdater("gamma", graph_c, design_c, state.hp_gamma, priors,
                         make_subblocks(bg.third_order.offsets, cfg.subblocks),
                         cfg.init_prop_scale_field, cfg.target_accept, cfg.adapt_gain)
    state.hp_beta = upd_b.hp
    state.hp_gamma = upd_c.hp
    df_prop = AdaptiveProposal(1, cfg.init_prop_scale_df, cfg.target_accept, cfg.adapt_gain)
    df_counters = {}
    df_block = [0, 0]
    df_hist = []

    audit = {"checked": 0, "violations": 0, "max_rel_dev": 0.0}
    y_scale = float(np.max(np.abs(y))) or 1.0

    def sweep(it, phase):
        w_inv = 1.0 / (state.sigma2 * state.omega)
        upd_b.phase = phase
        upd_c.phase = phase
        upd_b.step(state, w_inv, rng)
        upd_c.step(state, w_inv, rng)
        gibbs_nu(state, "beta", upd_b.prec, priors, rng)
        gibbs_nu(state, "gamma", upd_c.prec, priors, rng)
        gibbs_grain_means(state, gidx, priors, rng)
        gibbs_error_params(state, priors, rng)
        acc = metropolis_df(state, priors, df_prop, rng)
        a, t = df_counters.get(phase, (0, 0))
        df_counters[phase] = (a + int(acc), t + 1)
        df_block[0] += int(acc)
        df_block[1] += 1
        df_hist.append(math.log(state.df))
        if cfg.audit_every and (it + 1) % cfg.audit_every == 0:
            exact = y - state.mu_g[gidx]
            apply_design(upd_b.design, state.beta, out=exact, sign=-1.0)
            apply_design(upd_c.design, state.gamma, out=exact, sign=-1.0)
            dev = float(np.max(np.abs(state.r - exact))) / y_scale if len(y) else 0.0
            audit["checked"] += 1
            audit["max_rel_dev"] = max(audit["max_rel_dev"], dev)
            if dev > cfg.audit_rtol:
                audit["violations"] += 1

    t_setup = time.perf_counter()
    it = 0
    for _ in range(cfg.adapt_blocks):
        for _ in range(cfg.adapt_block_size):
            sweep(it, "adapt")
            it += 1
        upd_b.finish_block()
        upd_c.finish_block()
        rate = df_block[0] / df_block[1] if df_block[1] else 0.0
        df_prop.end_block(rate, np.asarray(df_hist)[:, None])
        df_block[0] = df_block[1] = 0
        df_hist.clear()
    t_adapt = time.perf_counter()

    for _ in range(cfg.burnin):
        sweep(it, "burnin")
        it += 1
    t_burn = time.perf_counter()

    G = mesh.n_grains
    columns = (["iter", "loglik", "mu", "tau2", "sigma2", "df"]
               + [f"mu_g_{g}" for g in range(1, G + 1)]
               + ["nu_beta", "theta_beta", "kappa_beta", "rho_beta", "phi_beta",
                  "nu_gamma", "theta_gamma", "kappa_gamma", "rho_gamma", "phi_gamma",
                  "beta_mean", "beta_sd", "gamma_mean", "gamma_sd",
                  "r2_adj_const", "r2_adj_grain"])
    n_retained = cfg.samples // cfg.thin
    scalars = np.empty((n_retained, len(columns)))
    beta_snaps, gamma_snaps, snap_iters = [], [], []
    mean_fitted = np.zeros(mesh.n_elements)
    mean_beta = np.zeros(bg.second_order.dim)
    mean_gamma = np.zeros(bg.third_order.dim)
    p_eff = G + bg.second_order.dim + bg.third_order.dim

    row = 0
    for k in range(cfg.samples):
        sweep(it, "sampling")
        it += 1
        if (k + 1) % cfg.thin == 0:
            fitted = y - state.r
            mean_fitted += fitted
            mean_beta += state.beta
            mean_gamma += state.gamma
            hb, hc = state.hp_beta, state.hp_gamma
            bm, bs = _field_summary(state.beta)
            gm, gs = _field_summary(state.gamma)
            try:
                r2c = r2_adjusted(y, fitted, p_eff, baseline="constant")
                r2g = r2_adjusted(y, fitted, p_eff, baseline="grain-means",
                                  grain_index=gidx)
            except ValueError:
                r2c = r2g = math.nan
            scalars[row] = ([it, log_likelihood(state), state.mu, state.tau2,
                             state.sigma2, state.df]
                            + list(state.mu_g)
                            + [hb.nu, hb.theta, hb.kappa, hb.rho, hb.phi,
                               hc.nu, hc.theta, hc.kappa, hc.rho, hc.phi,
                               bm, bs, gm, gs, r2c, r2g])
            if row % cfg.snapshot_stride == 0:
                beta_snaps.append(state.beta.copy())
                gamma_snaps.append(state.gamma.copy())
                snap_iters.append(it)
            row += 1
    t_end = time.perf_counter()

    if row:
        mean_fitted /= row
        mean_beta /= row
        mean_gamma /= row
    acceptance = {
        "beta": {ph: upd_b.acceptance_rate(ph) for ph in upd_b.counters},
        "gamma": {ph: upd_c.acceptance_rate(ph) for ph in upd_c.counters},
        "df": {ph: (a / t if t else math.nan) for ph, (a, t) in df_counters.items()},
    }
    timings = {"setup": t_setup - t_start, "adapt": t_adapt - t_setup,
               "burnin": t_burn - t_adapt, "sampling": t_end - t_burn,
               "total": t_end - t_start}
    logger.info("chain finished: %d sweeps, %.1fs", it, timings["total"])
    return ChainResult(
        columns=columns, scalars=scalars[:row],
        beta_snapshots=np.array(beta_snaps) if beta_snaps else np.empty((0, bg.second_order.dim)),
        gamma_snapshots=np.array(gamma_snaps) if gamma_snaps else np.empty((0, bg.third_order.dim)),
        snapshot_iters=np.array(snap_iters, dtype=np.int64),
        acceptance=acceptance, mean_fitted=mean_fitted, mean_beta=mean_beta,
        mean_gamma=mean_gamma, final_state=state, audit=audit, timings=timings)
