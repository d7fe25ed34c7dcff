"""Closed-form posterior algebra for the mixture model.

Every quantity conditional on the mixture weight has an exact form: the
coefficient posterior of each component is Multivariate Normal given the
noise variance, the noise variance posterior is scaled inverse
chi-square, and the posterior component weight comes from the two
Student-t marginal likelihoods of the shifted outcomes. The rank-3
structure of the design lets all N x N expressions reduce to 3 x 3
solves (Woodbury identity and the matrix determinant lemma), which is
both faster and stable for large N.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .data import DesignMatrix
from .errors import (
    NonFiniteDensity,
    NumericalFailure,
    UndefinedVariance,
    ValidationError,
)
from .prior import (
    FlatComponent,
    InformativeComponent,
    MixturePrior,
    WeightPrior,
    log_prior_density_flat,
    log_prior_density_informative,
)

logger = logging.getLogger(__name__)

DEFAULT_OMEGA_GRID_SIZE = 2048
_PSD_TOL = 1e-8


@dataclass(frozen=True)
class ComponentPosterior:
    """Conditional posterior of one mixture component.

    Attributes:
        beta_mean: posterior mean of the coefficients.
        cov_factor: coefficient covariance divided by the noise variance
            (symmetric positive definite 3 x 3).
        sigma_scale: scale of the variance posterior.
        sigma_df: degrees of freedom of the variance posterior.
        log_marginal: log marginal likelihood of the shifted outcomes
            under this component (Student-t form, all constants).
    """

    beta_mean: np.ndarray
    cov_factor: np.ndarray
    sigma_scale: float
    sigma_df: float
    log_marginal: float

    def __post_init__(self):
        sym_gap = float(np.max(np.abs(self.cov_factor - self.cov_factor.T)))
        if sym_gap > _PSD_TOL:
            raise NumericalFailure("covariance factor is not symmetric")
        eigs = np.linalg.eigvalsh(self.cov_factor)
        if eigs.min() < -_PSD_TOL * max(1.0, eigs.max()):
            raise NumericalFailure("covariance factor is not positive semidefinite")
        if self.sigma_scale < 0:
            raise NumericalFailure("sigma_scale must be nonnegative")

    def beta_marginal_cov(self) -> np.ndarray:
        """Marginal (Student-t) covariance of the coefficients."""
        if self.sigma_df <= 2:
            raise UndefinedVariance(
                f"variance undefined for {self.sigma_df} degrees of freedom"
            )
        return self.sigma_df * self.sigma_scale / (self.sigma_df - 2.0) * self.cov_factor


@dataclass(frozen=True)
class ConditionalPosterior:
    """Both component posteriors plus the posterior component weight for
    a given prior weight."""

    omega_star: float
    informative: ComponentPosterior
    flat: ComponentPosterior
    log_ml_informative: float
    log_ml_flat: float

    def __post_init__(self):
        if not 0.0 <= self.omega_star <= 1.0:
            raise NumericalFailure(f"omega_star {self.omega_star} outside [0, 1]")


@dataclass(frozen=True)
class BetaMoments:
    """Posterior mean and covariance of the coefficients given the weight."""

    mean: np.ndarray
    cov: np.ndarray


def _component_core(design: DesignMatrix, prior_mean: np.ndarray,
                    k_diag: np.ndarray, nu: float, scale: float,
                    ) -> tuple[np.ndarray, np.ndarray, float, float, float]:
    """Shared conjugate update for one component.

    Returns (beta_star, cov_factor, sigma_scale, sigma_df, log_marginal).
    The N x N forms reduce exactly:
        (I + V K V')^-1            -> I - V (K^-1 + V'V)^-1 V'
        K V' (I + V K V')^-1      -> (K^-1 + V'V)^-1 V'
        K - K V'(I + V K V')^-1 VK -> (K^-1 + V'V)^-1
        det(I + V K V')            -> det(I3 + K^(1/2) V'V K^(1/2))
    """
    V = design.V
    yc = design.y_centered
    n = design.n
    gram = V.T @ V
    inner = np.diag(1.0 / k_diag) + gram
    resid0 = yc - V @ prior_mean
    vt_resid0 = V.T @ resid0
    try:
        shift = np.linalg.solve(inner, vt_resid0)
        cov_factor = np.linalg.inv(inner)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"3x3 inner solve failed: {exc}") from exc
    if not np.all(np.isfinite(shift)) or not np.all(np.isfinite(cov_factor)):
        raise NumericalFailure("inner solve produced non-finite values")
    cov_factor = 0.5 * (cov_factor + cov_factor.T)
    beta_star = prior_mean + shift

    # quadratic form of the marginal: resid0' (I + V K V')^-1 resid0
    quad = float(resid0 @ resid0) - float(vt_resid0 @ shift)
    quad = max(quad, 0.0)

    root_k = np.sqrt(k_diag)
    det_mat = np.eye(3) + (root_k[:, None] * gram) * root_k[None, :]
    sign, logdet = np.linalg.slogdet(det_mat)
    if sign <= 0:
        raise NumericalFailure("determinant lemma matrix is not positive definite")

    log_marginal = (
        gammaln((n + nu) / 2.0) - gammaln(nu / 2.0)
        - 0.5 * n * math.log(nu * math.pi) - 0.5 * n * math.log(scale)
        - 0.5 * logdet
        - 0.5 * (n + nu) * math.log1p(quad / (nu * scale))
    )

    resid_post = yc - V @ beta_star
    dev = beta_star - prior_mean
    sigma_df = n + nu
    sigma_scale = (float(resid_post @ resid_post) + nu * scale
                   + float(np.sum(dev * dev / k_diag))) / sigma_df
    return beta_star, cov_factor, sigma_scale, sigma_df, log_marginal


def component_posterior_informative(design: DesignMatrix,
                                    comp: InformativeComponent) -> ComponentPosterior:
    """Conditional posterior of the informative component."""
    beta, cov, scale, df, lml = _component_core(
        design, comp.beta_mean, comp.K, float(comp.df_H), comp.s2_H
    )
    return ComponentPosterior(beta_mean=beta, cov_factor=cov, sigma_scale=scale,
                              sigma_df=df, log_marginal=lml)


def component_posterior_flat(design: DesignMatrix,
                             comp: FlatComponent) -> ComponentPosterior:
    """Conditional posterior of the flat component."""
    beta, cov, scale, df, lml = _component_core(
        design, np.zeros(3), np.full(3, comp.k), comp.nu0, comp.sigma0_sq
    )
    return ComponentPosterior(beta_mean=beta, cov_factor=cov, sigma_scale=scale,
                              sigma_df=df, log_marginal=lml)


def mixture_weight_from_log_mls(omega: float, log_ml_informative: float,
                                log_ml_flat: float) -> float:
    """Posterior component weight from the prior weight and the two log
    marginal likelihoods, evaluated in log space."""
    if not 0.0 < omega < 1.0:
        raise ValidationError("omega must be in (0, 1)")
    z = math.log1p(-omega) - math.log(omega) + log_ml_flat - log_ml_informative
    if z >= 0:
        return 1.0 / (1.0 + math.exp(z))
    return math.exp(-z) / (1.0 + math.exp(-z))


def posterior_mixture_weight(omega: float, design: DesignMatrix,
                             prior: MixturePrior) -> ConditionalPosterior:
    """Posterior component weight and both component posteriors."""
    info = component_posterior_informative(design, prior.informative)
    flat = component_posterior_flat(design, prior.flat)
    omega_star = mixture_weight_from_log_mls(omega, info.log_marginal,
                                             flat.log_marginal)
    return ConditionalPosterior(
        omega_star=omega_star, informative=info, flat=flat,
        log_ml_informative=info.log_marginal, log_ml_flat=flat.log_marginal,
    )


def conditional_beta_moments(omega: float, design: DesignMatrix,
                             prior: MixturePrior) -> BetaMoments:
    """Posterior mean and covariance of the coefficients given the weight.

    The mean mixes the two component means by the posterior weight; the
    covariance adds the two weighted Student-t component covariances and
    the between-component spread term from the law of total variance.
    """
    cp = posterior_mixture_weight(omega, design, prior)
    info, flat = cp.informative, cp.flat
    if info.sigma_df <= 2 or flat.sigma_df <= 2:
        raise UndefinedVariance("component degrees of freedom must exceed 2")
    w = cp.omega_star
    mean = w * info.beta_mean + (1.0 - w) * flat.beta_mean
    gap = info.beta_mean - flat.beta_mean
    cov = (w * info.beta_marginal_cov()
           + (1.0 - w) * flat.beta_marginal_cov()
           + w * (1.0 - w) * np.outer(gap, gap))
    return BetaMoments(mean=mean, cov=0.5 * (cov + cov.T))


@dataclass(frozen=True)
class OmegaDensityTable:
    """Normalized density of the mixture weight on an open midpoint grid.

    The density values are scaled so the midpoint rule integrates them to
    exactly one; ``prior_fallback`` flags that both mixture terms
    underflowed everywhere and the Beta prior was returned instead.
    """

    grid: np.ndarray
    density: np.ndarray
    prior_fallback: bool = False

    @cached_property
    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid of the density over the grid, rescaled
        to end at one."""
        steps = np.diff(self.grid)
        segments = 0.5 * (self.density[1:] + self.density[:-1]) * steps
        cdf = np.concatenate([[0.0], np.cumsum(segments)])
        return cdf / cdf[-1]

    def integral(self) -> float:
        """Midpoint-rule integral of the stored density."""
        h = 1.0 / len(self.grid)
        return float(np.sum(self.density) * h)

    def mean(self) -> float:
        h = 1.0 / len(self.grid)
        return float(np.sum(self.grid * self.density) * h)


def omega_midpoint_grid(size: int = DEFAULT_OMEGA_GRID_SIZE) -> np.ndarray:
    """Open uniform grid of cell midpoints on (0, 1); avoids the endpoint
    singularities of Beta weights below one."""
    if size < 2:
        raise ValidationError("grid size must be at least 2")
    return (np.arange(size) + 0.5) / size


def normalize_omega_density(grid: np.ndarray, log_term_informative: float,
                            log_term_flat: float, weight: WeightPrior,
                            ) -> OmegaDensityTable:
    """Normalized weight density p(w) * (w * A + (1 - w) * B) on a grid.

    ``log_term_informative`` and ``log_term_flat`` are log A and log B:
    prior densities at fixed parameters for the conditional posterior of
    the weight, or log marginal likelihoods for its marginal posterior.
    If both terms are -inf the Beta prior itself is returned, which is
    the correct zero-information limit, and a warning is logged.
    """
    if math.isnan(log_term_informative) or math.isnan(log_term_flat):
        raise NonFiniteDensity("log density terms are NaN")
    log_prior = weight.log_density(grid)
    peak = max(log_term_informative, log_term_flat)
    if peak == -math.inf:
        logger.warning(
            "both mixture terms underflowed on the whole grid; "
            "falling back to the Beta prior for the weight density"
        )
        density = np.exp(log_prior)
        fallback = True
    else:
        mix = (grid * math.exp(log_term_informative - peak)
               + (1.0 - grid) * math.exp(log_term_flat - peak))
        density = np.exp(log_prior) * mix
        fallback = False
    h = 1.0 / len(grid)
    total = float(np.sum(density)) * h
    if not math.isfinite(total) or total <= 0:
        raise NonFiniteDensity("weight density could not be normalized")
    return OmegaDensityTable(grid=grid, density=density / total,
                             prior_fallback=fallback)


def log_conditional_omega_density(omega: float, beta, sigma_sq: float,
                                  prior: MixturePrior) -> float:
    """Unnormalized log posterior of the weight given the parameters."""
    if not 0.0 < omega < 1.0:
        raise ValidationError("omega must be in (0, 1)")
    log_a = log_prior_density_informative(beta, sigma_sq, prior.informative)
    log_b = log_prior_density_flat(beta, sigma_sq, prior.flat)
    return float(prior.weight.log_density(omega)) + float(
        np.logaddexp(math.log(omega) + log_a, math.log1p(-omega) + log_b)
    )


def conditional_omega_table(beta, sigma_sq: float, prior: MixturePrior,
                            grid: np.ndarray) -> OmegaDensityTable:
    """Quadrature-normalized conditional posterior of the weight."""
    log_a = log_prior_density_informative(beta, sigma_sq, prior.informative)
    log_b = log_prior_density_flat(beta, sigma_sq, prior.flat)
    return normalize_omega_density(grid, log_a, log_b, prior.weight)


def log_marginal_omega_density(omega: float, design: DesignMatrix,
                               prior: MixturePrior) -> float:
    """Unnormalized log marginal posterior of the weight.

    Uses log p(w) + log(w * m_I + (1 - w) * m_F) with the component
    marginal likelihoods, which is the parameter-free value of the joint
    over conditional posterior ratio at any parameter point.
    """
    if not 0.0 < omega < 1.0:
        raise ValidationError("omega must be in (0, 1)")
    info = component_posterior_informative(design, prior.informative)
    flat = component_posterior_flat(design, prior.flat)
    return float(prior.weight.log_density(omega)) + float(
        np.logaddexp(math.log(omega) + info.log_marginal,
                     math.log1p(-omega) + flat.log_marginal)
    )


def marginal_omega_table(design: DesignMatrix, prior: MixturePrior,
                         grid: np.ndarray) -> OmegaDensityTable:
    """Quadrature-normalized marginal posterior of the weight."""
    info = component_posterior_informative(design, prior.informative)
    flat = component_posterior_flat(design, prior.flat)
    return normalize_omega_density(grid, info.log_marginal, flat.log_marginal,
                                   prior.weight)


def ess(n: int, v1: float, v2: float) -> float:
    """Effective sample size N * V1 / V2, with V1 the reference
    (non-informative) variance and V2 the informative-analysis variance."""
    if v1 <= 0 or v2 <= 0:
        raise ValidationError("variances must be positive")
    return n * (v1 / v2)


def sample_size_reduction(n: int, v1: float, v2: float) -> float:
    """Companion value ESS - N, computed from the same ratio."""
    return ess(n, v1, v2) - n
