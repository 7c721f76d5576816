"""Bayesian additive Cox proportional hazards models with a two-part
spike-and-slab lasso prior, fitted by EM-coordinate descent."""

from .cox import SurvivalDataset, c_index, deviance, kaplan_meier, partial_loglik
from .exceptions import (
    BasisConstructionError,
    CalibrationError,
    DegeneratePredictorError,
    InputError,
    NumericalError,
    SSLCoxError,
    TuningError,
    UndefinedMetricError,
)
from .spline import SplineSpec, build_basis, build_design, transform
from .sslfit import FitControl, FitResult, PriorConfig, fit
from .tuning import PathSpec, cv_path, default_s0_grid, variance_filter

__version__ = "0.1.0"

__all__ = [
    "SurvivalDataset", "c_index", "deviance", "kaplan_meier", "partial_loglik",
    "SSLCoxError", "InputError", "DegeneratePredictorError", "BasisConstructionError",
    "NumericalError", "CalibrationError", "TuningError", "UndefinedMetricError",
    "SplineSpec", "build_basis", "build_design", "transform",
    "FitControl", "FitResult", "PriorConfig", "fit",
    "PathSpec", "cv_path", "default_s0_grid", "variance_filter",
]
