"""The additive two-component mixture prior.

The informative component is the posterior of (intercept, slope, noise
variance) from a regression of shifted historical outcomes on centered
historical prognostic scores: a trivariate Normal for the coefficients
(treatment entry centered at zero with a wide variance) times a scaled
inverse chi-square for the noise variance. The flat component is a proper
weakly informative prior of the same conjugate family, and the mixture
weight carries a Beta prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.special import gammaln

from .data import HistoricalDataset
from .errors import (
    DegenerateFit,
    DegenerateResample,
    RankDeficient,
    UndefinedPriorESS,
    ValidationError,
)

DEFAULT_K1 = 100.0
DEFAULT_FLAT_K = 100.0
_DEGENERATE_RTOL = 1e-12
_BOOTSTRAP_RETRY_CAP = 100

K0Mode = Literal["inverse_N", "inverse_sqrt_N", "explicit"]


@dataclass(frozen=True)
class InformativeComponent:
    """Historical-data component of the mixture prior.

    Attributes:
        beta0_hat_H: fitted intercept of the centered historical regression.
        beta2_hat_H: fitted slope on the centered prognostic scores.
        s2_H: residual variance estimate (positive).
        df_H: residual degrees of freedom, the historical size minus 2.
        K: positive diagonal (K0, K1, K2) of the coefficient prior
            covariance factor.
        ss_m_H: centered sum of squares of the historical scores, kept
            for the bias-shift calibration of K2.
    """

    beta0_hat_H: float
    beta2_hat_H: float
    s2_H: float
    df_H: int
    K: np.ndarray
    ss_m_H: float

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float))
        if self.K.shape != (3,) or not np.all(self.K > 0):
            raise ValidationError("K must be three positive entries")
        if self.s2_H < 0:
            raise ValidationError("s2_H must be nonnegative")
        if self.df_H < 2:
            raise ValidationError("df_H must be at least 2")

    @property
    def n_hist(self) -> int:
        return self.df_H + 2

    @property
    def beta_mean(self) -> np.ndarray:
        return np.array([self.beta0_hat_H, 0.0, self.beta2_hat_H])


@dataclass(frozen=True)
class FlatComponent:
    """Weakly informative proper component: coefficients N(0, sigma^2 k I),
    variance scaled-inverse-chi-square(nu0, sigma0_sq)."""

    k: float = DEFAULT_FLAT_K
    nu0: float = 1.0
    sigma0_sq: float = 1.0

    def __post_init__(self):
        if not (self.k > 0 and self.nu0 > 0 and self.sigma0_sq > 0):
            raise ValidationError("k, nu0, sigma0_sq must all be positive")


@dataclass(frozen=True)
class WeightPrior:
    """Beta(alpha1, alpha2) prior on the mixture weight."""

    alpha1: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValidationError("alpha1 and alpha2 must be positive")

    def log_density(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        const = (gammaln(self.alpha1 + self.alpha2)
                 - gammaln(self.alpha1) - gammaln(self.alpha2))
        return (const + (self.alpha1 - 1.0) * np.log(omega)
                + (self.alpha2 - 1.0) * np.log1p(-omega))


@dataclass(frozen=True)
class MixturePrior:
    informative: InformativeComponent
    flat: FlatComponent
    weight: WeightPrior


def fit_informative_component(
    hist: HistoricalDataset,
    k0_mode: K0Mode = "inverse_N",
    k1: float = DEFAULT_K1,
    explicit_k: Sequence[float] | None = None,
) -> InformativeComponent:
    """Fit the informative prior component from historical control data.

    The intercept and slope solve the two-predictor normal equations of
    the shifted outcomes on (1, centered score); the variance estimate is
    the residual sum of squares over n - 2.

    Args:
        hist: historical control dataset.
        k0_mode: "inverse_N" sets K0 = 1/n_hist and K2 to the slope
            diagonal of the inverse Gram matrix; "inverse_sqrt_N" replaces
            K0 with n_hist**-0.5; "explicit" takes all three from
            ``explicit_k``.
        k1: prior variance factor for the treatment coefficient (kept
            large but finite so the component stays proper).
        explicit_k: (K0, K1, K2) when ``k0_mode == "explicit"``.

    Raises:
        DegenerateFit: residual sum of squares is zero, which would make
            the induced variance prior improper.
        RankDeficient: historical scores are constant.
    """
    y = hist.outcomes
    m = hist.prognostic_scores
    n_hist = hist.n
    m_bar = float(np.mean(m))
    yc = y - m_bar
    mc = m - m_bar
    ss_m = float(mc @ mc)
    if ss_m <= 0:
        raise RankDeficient("historical prognostic scores are constant")

    # centered design => orthogonal normal equations
    beta0 = float(np.mean(yc))
    beta2 = float(mc @ yc) / ss_m
    resid = yc - beta0 - beta2 * mc
    rss = float(resid @ resid)
    if rss <= _DEGENERATE_RTOL * max(1.0, float(yc @ yc)):
        raise DegenerateFit(
            "historical regression fits exactly (zero residual variance); "
            "the induced variance prior would be improper"
        )
    df = n_hist - 2
    s2 = rss / df

    if k0_mode == "explicit":
        if explicit_k is None:
            raise ValidationError("explicit_k required when k0_mode='explicit'")
        K = np.asarray(explicit_k, dtype=float)
    elif k0_mode == "inverse_N":
        K = np.array([1.0 / n_hist, k1, 1.0 / ss_m])
    elif k0_mode == "inverse_sqrt_N":
        K = np.array([n_hist ** -0.5, k1, 1.0 / ss_m])
    else:
        raise ValidationError(f"unknown k0_mode {k0_mode!r}")

    return InformativeComponent(
        beta0_hat_H=beta0, beta2_hat_H=beta2, s2_H=s2, df_H=df, K=K, ss_m_H=ss_m
    )


def log_scaled_inv_chisq_density(sigma_sq: float, df: float, scale: float) -> float:
    """Log density of the scaled inverse chi-square distribution
    df * scale / chi2_df evaluated at sigma_sq > 0."""
    if sigma_sq <= 0:
        raise ValidationError("sigma_sq must be positive")
    half = df / 2.0
    return (half * math.log(df * scale / 2.0) - gammaln(half)
            - (half + 1.0) * math.log(sigma_sq) - df * scale / (2.0 * sigma_sq))


def _log_mvn_diag(beta: np.ndarray, mean: np.ndarray, sigma_sq: float,
                  k_diag: np.ndarray) -> float:
    """Log density of N(mean, sigma_sq * diag(k_diag)) at beta."""
    dev = beta - mean
    quad = float(np.sum(dev * dev / k_diag))
    return (-1.5 * math.log(2.0 * math.pi * sigma_sq)
            - 0.5 * float(np.sum(np.log(k_diag)))
            - quad / (2.0 * sigma_sq))


def log_prior_density_informative(beta, sigma_sq: float,
                                  comp: InformativeComponent) -> float:
    """Log of the informative component density at (beta, sigma_sq).

    Normal for the coefficients given the variance, times a scaled
    inverse chi-square for the variance, with all normalization constants
    so the density integrates to one.
    """
    beta = np.asarray(beta, dtype=float)
    return (_log_mvn_diag(beta, comp.beta_mean, sigma_sq, comp.K)
            + log_scaled_inv_chisq_density(sigma_sq, comp.df_H, comp.s2_H))


def log_prior_density_flat(beta, sigma_sq: float, comp: FlatComponent) -> float:
    """Log of the flat component density at (beta, sigma_sq)."""
    beta = np.asarray(beta, dtype=float)
    k_diag = np.full(3, comp.k)
    return (_log_mvn_diag(beta, np.zeros(3), sigma_sq, k_diag)
            + log_scaled_inv_chisq_density(sigma_sq, comp.nu0, comp.sigma0_sq))


def bootstrap_delta_variance(hist: HistoricalDataset, trial_n: int, j: int,
                             seed: int) -> float:
    """Bootstrap the variance of the historical regression intercept at
    the prospective trial size.

    Each replicate resamples the historical records with replacement at
    size ``trial_n``, refits the centered two-parameter regression, and
    keeps the intercept. Returns the sample variance of the ``j``
    intercepts. Degenerate resamples (constant scores) are redrawn up to
    a retry cap.
    """
    if j < 100:
        raise ValidationError(f"need at least 100 bootstrap replicates, got {j}")
    if trial_n < 2:
        raise ValidationError("trial_n must be at least 2")
    rng = np.random.default_rng(seed)
    y = hist.outcomes
    m = hist.prognostic_scores
    intercepts = np.empty(j)
    for rep in range(j):
        for _ in range(_BOOTSTRAP_RETRY_CAP):
            idx = rng.integers(0, hist.n, size=trial_n)
            mb = m[idx]
            if mb.max() > mb.min():
                break
        else:
            raise DegenerateResample(
                f"replicate {rep}: scores constant after {_BOOTSTRAP_RETRY_CAP} redraws"
            )
        yb = y[idx]
        m_bar = float(np.mean(mb))
        yc = yb - m_bar
        mc = mb - m_bar
        # centered design: intercept and slope decouple
        beta0 = float(np.mean(yc))
        intercepts[rep] = beta0
    return float(np.var(intercepts, ddof=1))


def calibrate_k_hyperparameters(comp: InformativeComponent, gamma: float,
                                var_delta: float) -> tuple[float, float]:
    """Discount the informative component for an anticipated bias shift.

    Returns (K0, K2) with K0 = gamma/n_hist + var_delta/s2_H and
    K2 = gamma / (n_hist * centered score sum of squares). Larger gamma
    or shift variance weakens the historical information.
    """
    if gamma <= 0:
        raise ValidationError("gamma must be positive (K2 would vanish at zero)")
    if var_delta < 0:
        raise ValidationError("var_delta must be nonnegative")
    if comp.s2_H <= 0:
        raise ValidationError("calibration requires s2_H > 0")
    n_hist = comp.n_hist
    k0 = gamma / n_hist + var_delta / comp.s2_H
    k2 = gamma / (n_hist * comp.ss_m_H)
    return k0, k2


def recalibrated(comp: InformativeComponent, gamma: float,
                 var_delta: float) -> InformativeComponent:
    """Copy of ``comp`` with (K0, K2) replaced by the calibrated values."""
    k0, k2 = calibrate_k_hyperparameters(comp, gamma, var_delta)
    return InformativeComponent(
        beta0_hat_H=comp.beta0_hat_H,
        beta2_hat_H=comp.beta2_hat_H,
        s2_H=comp.s2_H,
        df_H=comp.df_H,
        K=np.array([k0, comp.K[1], k2]),
        ss_m_H=comp.ss_m_H,
    )


def prior_beta1_variance(prior: MixturePrior, omega: float) -> float:
    """Prior variance of the treatment coefficient given the mixture weight.

    Both component means for the treatment coefficient are zero, so the
    law of total variance has no between-component term:
    omega * K1 * E_I[sigma^2] + (1 - omega) * k * E_F[sigma^2].
    Returns ``math.inf`` when a required variance moment does not exist
    (degrees of freedom of 2 or fewer); infinity is a value here, not an
    error.
    """
    if not 0.0 < omega < 1.0:
        raise ValidationError("omega must be in (0, 1)")
    info = prior.informative
    flat = prior.flat
    if info.df_H <= 2:
        e_sigma_info = math.inf
    else:
        e_sigma_info = info.df_H * info.s2_H / (info.df_H - 2)
    if flat.nu0 <= 2:
        e_sigma_flat = math.inf
    else:
        e_sigma_flat = flat.nu0 * flat.sigma0_sq / (flat.nu0 - 2)
    if not (math.isfinite(e_sigma_info) and math.isfinite(e_sigma_flat)):
        return math.inf
    return omega * float(info.K[1]) * e_sigma_info + (1.0 - omega) * flat.k * e_sigma_flat


def prior_effective_sample_size(prior: MixturePrior, omega: float,
                                s_sq_estimate: float) -> float:
    """Trial size whose non-informative posterior for the treatment
    coefficient carries the same information as the prior: 4 s^2 / Var."""
    var = prior_beta1_variance(prior, omega)
    if not math.isfinite(var):
        raise UndefinedPriorESS(
            "prior variance of the treatment coefficient is infinite "
            "(a variance component has 2 or fewer degrees of freedom)"
        )
    if var <= 0:
        raise ValidationError("prior variance must be positive")
    return 4.0 * s_sq_estimate / var


def mixture_prior_to_dict(prior: MixturePrior) -> dict:
    """JSON-serializable document mirroring the three prior blocks."""
    info = prior.informative
    return {
        "informative": {
            "beta0_hat_H": info.beta0_hat_H,
            "beta2_hat_H": info.beta2_hat_H,
            "s2_H": info.s2_H,
            "df_H": info.df_H,
            "K": [float(x) for x in info.K],
            "ss_m_H": info.ss_m_H,
        },
        "flat": {
            "k": prior.flat.k,
            "nu0": prior.flat.nu0,
            "sigma0_sq": prior.flat.sigma0_sq,
        },
        "weight": {
            "alpha1": prior.weight.alpha1,
            "alpha2": prior.weight.alpha2,
        },
    }


def mixture_prior_from_dict(doc: dict) -> MixturePrior:
    """Inverse of :func:`mixture_prior_to_dict`."""
    try:
        info = doc["informative"]
        flat = doc["flat"]
        weight = doc["weight"]
        comp = InformativeComponent(
            beta0_hat_H=float(info["beta0_hat_H"]),
            beta2_hat_H=float(info["beta2_hat_H"]),
            s2_H=float(info["s2_H"]),
            df_H=int(info["df_H"]),
            K=np.asarray(info["K"], dtype=float),
            ss_m_H=float(info["ss_m_H"]),
        )
        return MixturePrior(
            informative=comp,
            flat=FlatComponent(k=float(flat["k"]), nu0=float(flat["nu0"]),
                               sigma0_sq=float(flat["sigma0_sq"])),
            weight=WeightPrior(alpha1=float(weight["alpha1"]),
                               alpha2=float(weight["alpha2"])),
        )
    except KeyError as exc:
        raise ValidationError(f"prior document missing field {exc}") from exc
