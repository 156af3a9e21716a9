"""Joint estimation of subgroup-specific Gaussian graphical networks and
subgroup memberships, supervised by a right-censored survival outcome."""

__version__ = "0.1.0"

from .em import EmConfig, e_step, fit, initialize, m_step
from .estimator import SurvivalNetworkMixture
from .likelihood import (
    aft_log_terms,
    gaussian_logpdf,
    observed_data_loglik,
    penalized_log_posterior,
)
from .metrics import clustering_error, precision_matrix_error, support_rates
from .precision import AdmmConfig, solve_precisions, update_means, weighted_scatter
from .regression import update_regression
from .selection import bic, call_edges, compute_pip, select_model, threshold_estimate
from .simulate import SimDesign, generate_dataset, generate_networks
from .types import (
    Dataset,
    FitResult,
    Hyperparams,
    ModelParams,
    Responsibilities,
    native_coefficients,
    validate_dataset,
)

__all__ = [
    "AdmmConfig",
    "Dataset",
    "EmConfig",
    "FitResult",
    "Hyperparams",
    "ModelParams",
    "Responsibilities",
    "SimDesign",
    "SurvivalNetworkMixture",
    "aft_log_terms",
    "bic",
    "call_edges",
    "clustering_error",
    "compute_pip",
    "e_step",
    "fit",
    "gaussian_logpdf",
    "generate_dataset",
    "generate_networks",
    "initialize",
    "m_step",
    "native_coefficients",
    "observed_data_loglik",
    "penalized_log_posterior",
    "precision_matrix_error",
    "select_model",
    "solve_precisions",
    "support_rates",
    "threshold_estimate",
    "update_means",
    "update_regression",
    "validate_dataset",
    "weighted_scatter",
]
