"""Bayesian prognostic covariate adjustment with dynamic borrowing of
historical control information, plus the frequentist covariate-adjusted
baseline and a simulation harness for operating characteristics."""

__version__ = "0.1.0"

from .data import (
    DesignMatrix,
    HistoricalDataset,
    SubjectRecord,
    TrialDataset,
    build_design,
    load_historical_csv,
    load_trial_csv,
)
from .frequentist import OlsFit, procova_ci_and_test, procova_fit
from .posterior import (
    BetaMoments,
    ComponentPosterior,
    ConditionalPosterior,
    component_posterior_flat,
    component_posterior_informative,
    conditional_beta_moments,
    ess,
    log_conditional_omega_density,
    log_marginal_omega_density,
    posterior_mixture_weight,
    sample_size_reduction,
)
from .prior import (
    FlatComponent,
    InformativeComponent,
    MixturePrior,
    WeightPrior,
    bootstrap_delta_variance,
    calibrate_k_hyperparameters,
    fit_informative_component,
    log_prior_density_flat,
    log_prior_density_informative,
    mixture_prior_from_dict,
    mixture_prior_to_dict,
    prior_beta1_variance,
    prior_effective_sample_size,
)
from .sampler import (
    ChainSummary,
    GibbsConfig,
    GibbsDraw,
    gibbs_run,
    sample_mvn,
    sample_omega_inverse_cdf,
    sample_scaled_inv_chisq,
    sbc_validate,
    summarize,
)
from .simulation import (
    ReplicateRecord,
    ScenarioConfig,
    ScenarioResult,
    beta2_from_correlation,
    generate_pair,
    run_scenario,
    type1_error_curve,
)

__all__ = [name for name in dir() if not name.startswith("_")]
