"""Bayesian generalized linear geostatistical modelling of binomial count data.

A library and CLI for fitting a spatial binomial logit model with a Matern
Gaussian random field and an independent nugget, sampled by a whitened
Metropolis-within-Gibbs / Langevin scheme, with conditional-field prediction,
a logistic-regression baseline and calibration assessment utilities.
"""

from .assess import (
    empirical_coverage,
    narrowest_credible_interval,
    rmse_probs,
    total_count_summary,
)
from .covariance import (
    CovarianceModel,
    CovMatrix,
    build_covariance_matrix,
    conditional_field_draw,
    matern_correlation,
    unconditional_field_draw,
)
from .data import (
    DesignConstants,
    DesignMatrix,
    PlotRecord,
    SpatialDataset,
    SplitSpec,
    build_design_matrix,
    load_dataset,
    split_train_validation,
    write_dataset,
)
from .glm import GlmFit, glm_parametric_total_counts, glm_predict_probs, irls_fit
from .mcmc import ChainOutput, McmcConfig, run_chain
from .predict import GridSpec, PredictionDraws, draw_counts, predict_grid, predict_sites
from .reparam import (
    ConditioningMatrices,
    PriorSpec,
    ProfileCenter,
    TransformedState,
    conditioning_matrices,
    profile_center,
    unwhiten,
    whiten,
)
from .sampling import (
    Strata,
    SyntheticConfig,
    generate_synthetic_dataset,
    make_strata,
    random_subsample,
    stratified_subsample,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceModel", "CovMatrix", "build_covariance_matrix",
    "conditional_field_draw", "matern_correlation", "unconditional_field_draw",
    "DesignConstants", "DesignMatrix", "PlotRecord", "SpatialDataset",
    "SplitSpec", "build_design_matrix", "load_dataset",
    "split_train_validation", "write_dataset",
    "GlmFit", "glm_parametric_total_counts", "glm_predict_probs", "irls_fit",
    "ChainOutput", "McmcConfig", "run_chain",
    "GridSpec", "PredictionDraws", "draw_counts", "predict_grid", "predict_sites",
    "ConditioningMatrices", "PriorSpec", "ProfileCenter", "TransformedState",
    "conditioning_matrices", "profile_center", "unwhiten", "whiten",
    "Strata", "SyntheticConfig", "generate_synthetic_dataset", "make_strata",
    "random_subsample", "stratified_subsample",
    "empirical_coverage", "narrowest_credible_interval", "rmse_probs",
    "total_count_summary",
    "__version__",
]
