"""Observation model, priors and parameter state.

An element observation decomposes as grain mean + second-order boundary
convolution + third-order boundary convolution + heavy-tailed noise.  The
Student-t noise with ``df`` degrees of freedom is represented through its
normal scale mixture: a per-element latent scale ``omega_m`` with an
inverse-gamma distribution turns the error into a conditional normal, which
keeps every conditional in the sampler Gaussian or conjugate.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import gammaln, ndtr

from .gmrf import FieldHyperparams, log_density_gmrf

__all__ = [
    "PriorConfig", "ModelState", "log_likelihood", "scale_mixture_draw",
    "log_prior", "log_prior_alpha", "df_log_conditional",
]


@dataclass
class PriorConfig:
    """Prior hyperconstants.

    Defaults give a vague setup: flat-ish inverse gammas on the variances, a
    gamma with tiny shape on the field precision scales, a beta concentrated
    near large kappa, uniform coupling, and log-normal kernel decay rates
    with medians 0.6 (second order) and 0.8 (third order) whose means sit at
    0.8 and 1.0.  ``mu_mean`` is the data mean, frozen at load time.
    """

    mu_mean: float = None              # grand-mean prior center (set from data)
    mu_sd: float = 100.0
    tau2_shape: float = 0.001
    tau2_scale: float = 0.001
    sigma2_shape: float = 0.001
    sigma2_scale: float = 0.001
    nu_mean: float = 0.0
    nu_sd: float = 8.0
    theta_shape: float = 0.001
    theta_rate: float = 0.001
    kappa_a: float = 6.4
    kappa_b: float = 1.6
    rho_lower: float = -0.4
    phi_beta_meanlog: float = field(default_factory=lambda: math.log(0.6))
    phi_beta_varlog: float = field(default_factory=lambda: 2.0 * (math.log(0.8) - math.log(0.6)))
    phi_gamma_meanlog: float = field(default_factory=lambda: math.log(0.8))
    phi_gamma_varlog: float = field(default_factory=lambda: 2.0 * (math.log(1.0) - math.log(0.8)))
    df_min: float = 0.5
    df_max: float = 500.0

    def phi_logparams(self, which):
        if which == "beta":
            return self.phi_beta_meanlog, self.phi_beta_varlog
        if which == "gamma":
            return self.phi_gamma_meanlog, self.phi_gamma_varlog
        raise ValueError(f"unknown field {which!r}")


@dataclass
class ModelState:
    """Complete parameter state of one MCMC iteration."""

    mu_g: np.ndarray          # (G,) grain means
    mu: float                 # grand mean
    tau2: float               # grain-mean variance
    beta: np.ndarray          # second-order field (flat order)
    gamma: np.ndarray         # third-order field (flat order)
    hp_beta: FieldHyperparams
    hp_gamma: FieldHyperparams
    sigma2: float             # error scale
    omega: np.ndarray         # (M,) latent error scales
    df: float                 # t degrees of freedom
    r: np.ndarray             # (M,) maintained residual y - fitted

    def copy(self):
        return replace(
            self, mu_g=self.mu_g.copy(), beta=self.beta.copy(), gamma=self.gamma.copy(),
            omega=self.omega.copy(), r=self.r.copy(),
            hp_beta=replace(self.hp_beta), hp_gamma=replace(self.hp_gamma))


def log_likelihood(state):
    """Gaussian log likelihood given the latent scales (constants included)."""
    v = state.sigma2 * state.omega
    return float(-0.5 * np.sum(np.log(2.0 * math.pi * v) + state.r**2 / v))


def scale_mixture_draw(df, sigma2, size, rng):
    """Draw heavy-tailed errors via the normal scale mixture.

    Returns
    -------
    (omega, eps)
        Latent scales ``omega ~ InvGamma(df/2, df/2)`` and errors
        ``eps = sqrt(omega * sigma2) * z``; marginally ``eps`` is Student-t
        with ``df`` degrees of freedom and scale ``sqrt(sigma2)``.
    """
    omega = (df / 2.0) / rng.standard_gamma(df / 2.0, size=size)
    eps = np.sqrt(omega * sigma2) * rng.standard_normal(size)
    return omega, eps


def _invgamma_logpdf(x, shape, scale):
    if x <= 0.0:
        return -math.inf
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * math.log(x) - scale / x


def log_prior(state, priors, prec_beta, prec_gamma):
    """Joint log prior of everything except the data term.

    Includes the two GMRF field densities under the supplied precision
    matrices.  Returns ``-inf`` outside the support.
    """
    if priors.mu_mean is None:
        raise ValueError("priors.mu_mean must be set from the data before evaluating")
    lp = 0.0
    if state.tau2 <= 0.0 or state.sigma2 <= 0.0:
        return -math.inf
    if not priors.df_min < state.df <= priors.df_max:
        return -math.inf
    for hp, which in ((state.hp_beta, "beta"), (state.hp_gamma, "gamma")):
        if hp.theta <= 0.0 or not 0.0 < hp.kappa < 1.0 or not priors.rho_lower < hp.rho < 1.0:
            return -math.inf
        if hp.phi <= 0.0:
            return -math.inf
        meanlog, varlog = priors.phi_logparams(which)
        lp += stats.norm.logpdf(math.log(hp.phi), meanlog, math.sqrt(varlog)) - math.log(hp.phi)
        lp += stats.gamma.logpdf(hp.theta, priors.theta_shape, scale=1.0 / priors.theta_rate)
        lp += stats.beta.logpdf(hp.kappa, priors.kappa_a, priors.kappa_b)
        lp -= math.log(1.0 - priors.rho_lower)
        lp += stats.norm.logpdf(hp.nu, priors.nu_mean, priors.nu_sd)
    lp += float(np.sum(stats.norm.logpdf(state.mu_g, state.mu, math.sqrt(state.tau2))))
    lp += stats.norm.logpdf(state.mu, priors.mu_mean, priors.mu_sd)
    lp += _invgamma_logpdf(state.tau2, priors.tau2_shape, priors.tau2_scale)
    lp += _invgamma_logpdf(state.sigma2, priors.sigma2_shape, priors.sigma2_scale)
    half_df = state.df / 2.0
    lp += float(np.sum(half_df * math.log(half_df) - gammaln(half_df)
                       - (half_df + 1.0) * np.log(state.omega) - half_df / state.omega))
    lp += -2.0 * math.log(state.df)
    lp += log_density_gmrf(prec_beta, state.hp_beta.nu, state.beta)
    lp += log_density_gmrf(prec_gamma, state.hp_gamma.nu, state.gamma)
    return lp


def log_prior_alpha(alpha, priors, which):
    """Hyperprior density of one field in the transformed space.

    The transform is (ln phi, ln(theta/kappa), probit kappa, probit-scaled
    rho); the density includes the change-of-variables Jacobian.  Two terms
    simplify exactly: ln phi is normal because phi is log-normal, and the
    rescaled rho probit is standard normal because rho is uniform on the
    transform's own interval.
    """
    meanlog, varlog = priors.phi_logparams(which)
    a1, a2, a3, a4 = (float(a) for a in alpha)
    kappa = float(ndtr(a3))
    if not 0.0 < kappa < 1.0:
        return -math.inf
    theta = kappa * math.exp(a2)
    if not (theta > 0.0 and math.isfinite(theta)):
        return -math.inf
    lp = stats.norm.logpdf(a1, meanlog, math.sqrt(varlog))
    lp += stats.gamma.logpdf(theta, priors.theta_shape, scale=1.0 / priors.theta_rate)
    lp += math.log(theta)
    lp += stats.beta.logpdf(kappa, priors.kappa_a, priors.kappa_b)
    lp += stats.norm.logpdf(a3)
    lp += stats.norm.logpdf(a4)
    return float(lp)


def df_log_conditional(df, omega, df_min=0.5, df_max=500.0):
    """Unnormalized log density of the degrees of freedom given the scales.

    Combines the ``1/df^2`` prior with the inverse-gamma likelihood of the
    latent scales; zero outside ``(df_min, df_max]``.
    """
    if not df_min < df <= df_max:
        return -math.inf
    m = omega.shape[0]
    half = df / 2.0
    log_om_sum = float(np.sum(np.log(omega)))
    inv_om_sum = float(np.sum(1.0 / omega))
    return (-m * gammaln(half) + (m * half - 2.0) * math.log(half)
            - half * log_om_sum - half * inv_om_sum)
