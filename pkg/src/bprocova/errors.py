"""Exception types shared across the package."""


class BProcovaError(Exception):
    """Base class for all package errors."""


class ParseError(BProcovaError):
    """A data file could not be parsed (malformed row, missing column)."""


class ValidationError(BProcovaError):
    """An input violates a documented invariant or precondition."""


class NonFinite(ValidationError):
    """A numeric input contains NaN or infinity."""


class RankDeficient(ValidationError):
    """The design matrix does not have full column rank."""


class DegenerateFit(ValidationError):
    """The historical regression has zero residual variance, so the
    variance prior it would induce is improper."""


class DegenerateResample(BProcovaError):
    """A bootstrap resample remained degenerate after the retry cap."""


class NumericalFailure(BProcovaError):
    """A linear solve or factorization failed beyond tolerance."""


class UndefinedVariance(BProcovaError):
    """A requested posterior variance does not exist (too few degrees
    of freedom)."""


class UndefinedPriorESS(BProcovaError):
    """The prior variance of the treatment effect is infinite, so the
    prior effective sample size is undefined."""


class NonFiniteDensity(NumericalFailure):
    """A density evaluation produced NaN where a warning fallback was
    not possible."""


class ChainDiverged(NumericalFailure):
    """The Gibbs sampler produced a non-finite or non-positive variance
    draw."""


class NoFeasibleGamma(BProcovaError):
    """No value in the supplied gamma grid meets the target Type I
    error rate."""


class ScenarioFailed(BProcovaError):
    """More than the tolerated share of simulation replicates errored."""
