"""Penalized generalized estimating equations for clustered data."""
from .correlation import (CorrelationSpec, VarianceModel, build_correlation,
                          estimate_alpha, estimate_dispersion,
                          working_covariance)
from .data import (ColumnSchema, LongitudinalDataset, ScalingInfo,
                   destandardize, from_arrays, load_dataset, standardize)
from .penalties import (PenaltySpec, convexity_check, lqa_weights,
                        penalty_derivative, penalty_value, reparametrize)
from .simulate import (CrossSectionalConfig, LaggedConfig, SimReport,
                       StudyDesign, bootstrap_se, implied_beta, model_error,
                       run_study, selection_metrics, simulate_binomial,
                       simulate_cross_sectional, simulate_lagged)
from .solver import (ModelSpec, PgeeFit, SolverControl, SolverError,
                     StandardizationWarning, fit_gee, fit_pgee, gee_score,
                     mean_and_derivatives, pgls_objective)
from .tuning import (CvSurface, PathResult, TuningGrid, default_grid,
                     effective_parameters, lambda_max, loso_cv,
                     penalization_path, qgcv, select_tuning)

__version__ = "0.1.0"
