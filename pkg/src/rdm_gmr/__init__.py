"""Escapement estimation with population-level GSI uncertainty.

Genetic mark-recapture studies estimate weekly stock compositions from
sampled fish, then scale a marked count by the summed lake-type proportion.
The samplers and estimators here carry the composition uncertainty through
to that total instead of treating the weekly mixtures as known: a reverse
Dirichlet-multinomial model for the classifier output, a moment-matched
Dirichlet approximation for cheap likelihood evaluation, method-of-moments
intervals with a dispersion-aware variance, and a Metropolis-within-Gibbs
sampler for the Bayesian variants.
"""

__version__ = "0.1.0"

from .calibration import (
    CalibrationResult,
    DiagnosticRow,
    beta_tilde,
    calibrate_dataset,
    calibrate_week,
    estimate_beta,
    estimate_lambda,
    inflation_factor,
    mean_variance_diagnostic,
    pooled_beta,
)
from .core import Composition, CompositionEstimate, GmrDataset, LatentCounts, close_composition
from .dataio import load_dataset, read_config, save_dataset, validate_dataset
from .errors import (
    BoundaryValueError,
    DegenerateChainsError,
    DegenerateFitError,
    DegeneratePosteriorError,
    InitializationError,
    InvariantError,
    MaskError,
    NegativeEntryError,
    RdmGmrError,
    RejectionBudgetExceededError,
    SchemaError,
    StudyFailureError,
    ZeroLakeProportionError,
    ZeroSumError,
    ZeroVarianceError,
)
from .estimators import (
    EscapementEstimate,
    Method,
    Prior,
    Variant,
    lake_proportions,
    mom_escapement,
    mom_estimate,
    mom_variance,
    pooled_lake_se,
    sigma2_alt,
    sigma2_plugin,
    wald_interval,
    weekly_lake_sigma2,
)
from .inference import (
    LatentState,
    ModelSpec,
    PosteriorChains,
    PosteriorSummary,
    ar1_log_prior,
    ar1_prior_draws,
    escapement_from_draws,
    escapement_value,
    gelman_rubin,
    mmd_log_likelihood,
    posterior_summary,
    rdm_log_likelihood,
)
from .sampler import McmcConfig, bayes_estimate, run_mcmc
from .simulation import (
    PsiPredictive,
    SimulationTruth,
    StudyMetrics,
    default_study_truth,
    draw_dirichlet,
    draw_multinomial,
    psi_prior_predictive,
    run_study,
    simulate_dataset,
)

__all__ = [
    "__version__",
    "BoundaryValueError",
    "CalibrationResult",
    "Composition",
    "CompositionEstimate",
    "DegenerateChainsError",
    "DegenerateFitError",
    "DegeneratePosteriorError",
    "DiagnosticRow",
    "EscapementEstimate",
    "GmrDataset",
    "InitializationError",
    "InvariantError",
    "LatentCounts",
    "LatentState",
    "MaskError",
    "McmcConfig",
    "Method",
    "ModelSpec",
    "NegativeEntryError",
    "PosteriorChains",
    "PosteriorSummary",
    "Prior",
    "PsiPredictive",
    "RdmGmrError",
    "RejectionBudgetExceededError",
    "SchemaError",
    "SimulationTruth",
    "StudyFailureError",
    "StudyMetrics",
    "Variant",
    "ZeroLakeProportionError",
    "ZeroSumError",
    "ZeroVarianceError",
    "ar1_log_prior",
    "ar1_prior_draws",
    "bayes_estimate",
    "beta_tilde",
    "calibrate_dataset",
    "calibrate_week",
    "close_composition",
    "default_study_truth",
    "draw_dirichlet",
    "draw_multinomial",
    "escapement_from_draws",
    "escapement_value",
    "estimate_beta",
    "estimate_lambda",
    "gelman_rubin",
    "inflation_factor",
    "lake_proportions",
    "load_dataset",
    "mean_variance_diagnostic",
    "mmd_log_likelihood",
    "mom_escapement",
    "mom_estimate",
    "mom_variance",
    "pooled_beta",
    "pooled_lake_se",
    "posterior_summary",
    "psi_prior_predictive",
    "rdm_log_likelihood",
    "read_config",
    "run_mcmc",
    "run_study",
    "save_dataset",
    "sigma2_alt",
    "sigma2_plugin",
    "validate_dataset",
    "wald_interval",
    "weekly_lake_sigma2",
]
