"""Pre-validated predictors: construction, analytical and permutation inference,
asymptotic null laws and simulation studies."""

from __future__ import annotations

__version__ = "0.1.0"

from .data import Dataset, FoldAssignment, load_dataset, make_folds, write_dataset
from .errors import (
    DataFormatError,
    FitError,
    FoldFitError,
    LeverageError,
    NumericalError,
    PrevalidError,
    SingularDesignError,
    ValidationError,
)
from .external import ExternalFit, deviance_drop, fit_external, fit_linear_external, fit_logistic_external
from .internal import FittedInternalModel, InternalModelSpec, fit_internal, predict
from .permutation import PermutationResult, permutation_test, permutation_tests
from .prevalidation import PrevalidatedPredictor, cv_error, loo_linear_prevalidate, prevalidate

__all__ = [
    "__version__",
    "Dataset",
    "FoldAssignment",
    "load_dataset",
    "make_folds",
    "write_dataset",
    "PrevalidError",
    "ValidationError",
    "DataFormatError",
    "NumericalError",
    "SingularDesignError",
    "LeverageError",
    "FitError",
    "FoldFitError",
    "InternalModelSpec",
    "FittedInternalModel",
    "fit_internal",
    "predict",
    "ExternalFit",
    "fit_linear_external",
    "fit_logistic_external",
    "fit_external",
    "deviance_drop",
    "PrevalidatedPredictor",
    "prevalidate",
    "loo_linear_prevalidate",
    "cv_error",
    "PermutationResult",
    "permutation_test",
    "permutation_tests",
]
