"""Frequentist baseline: OLS of the outcome on (1, treatment, score)
with heteroskedasticity-consistent standard errors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .data import TrialDataset
from .errors import RankDeficient, ValidationError

HC_VARIANTS = ("HC0", "HC1", "HC3")
DEFAULT_HC_VARIANT = "HC1"


@dataclass(frozen=True)
class OlsFit:
    """OLS fit with classical and sandwich covariance estimates.

    ``coefficients`` is (intercept, treatment effect, score slope) on the
    uncentered design; ``hc_variant`` records which residual weighting
    produced ``hc_cov``.
    """

    coefficients: np.ndarray
    classical_cov: np.ndarray
    hc_cov: np.ndarray
    residuals: np.ndarray
    s_sq: float
    hc_variant: str
    n: int

    @property
    def beta1(self) -> float:
        return float(self.coefficients[1])

    @property
    def hc_se_beta1(self) -> float:
        return math.sqrt(float(self.hc_cov[1, 1]))

    @property
    def classical_se_beta1(self) -> float:
        return math.sqrt(float(self.classical_cov[1, 1]))


def procova_fit(trial: TrialDataset, hc_variant: str = DEFAULT_HC_VARIANT) -> OlsFit:
    """Fit the covariate-adjusted treatment-effect regression.

    The sandwich covariance is (X'X)^-1 X' diag(a_i e_i^2) X (X'X)^-1
    with a_i = 1 for HC0, n/(n-3) for HC1, and (1 - h_ii)^-2 for HC3.
    HC1 is scaled from HC0 so the two differ by exactly n/(n-3).
    """
    if hc_variant not in HC_VARIANTS:
        raise ValidationError(f"hc_variant must be one of {HC_VARIANTS}")
    X = np.column_stack([np.ones(trial.n), trial.w, trial.m])
    y = trial.y
    n = trial.n
    gram = X.T @ X
    if np.linalg.matrix_rank(X) != 3:
        raise RankDeficient("regression design does not have rank 3")
    gram_inv = np.linalg.inv(gram)
    coefficients = gram_inv @ (X.T @ y)
    residuals = y - X @ coefficients
    rss = float(residuals @ residuals)
    s_sq = rss / (n - 3)
    classical_cov = s_sq * gram_inv

    e_sq = residuals**2
    if hc_variant == "HC3":
        leverage = np.einsum("ij,jk,ik->i", X, gram_inv, X)
        weights = e_sq / (1.0 - leverage) ** 2
    else:
        weights = e_sq
    meat = (X.T * weights) @ X
    hc_cov = gram_inv @ meat @ gram_inv
    if hc_variant == "HC1":
        hc_cov = hc_cov * (n / (n - 3))

    return OlsFit(
        coefficients=coefficients,
        classical_cov=0.5 * (classical_cov + classical_cov.T),
        hc_cov=0.5 * (hc_cov + hc_cov.T),
        residuals=residuals,
        s_sq=s_sq,
        hc_variant=hc_variant,
        n=n,
    )


def procova_ci_and_test(fit: OlsFit, level: float = 0.05,
                        ) -> tuple[tuple[float, float], bool]:
    """Wald interval and test for the treatment effect.

    The interval is beta1 +/- t_{n-3, 1-level/2} * HC standard error; the
    null of no effect is rejected when the interval excludes zero.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError("level must be in (0, 1)")
    crit = float(student_t.ppf(1.0 - level / 2.0, fit.n - 3))
    half = crit * fit.hc_se_beta1
    lo, hi = fit.beta1 - half, fit.beta1 + half
    reject = lo > 0.0 or hi < 0.0
    return (lo, hi), reject
