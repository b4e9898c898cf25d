"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` for bad inputs or
configuration, and ``NumericalError`` for fits that cannot be computed on
otherwise valid inputs.  The CLI maps them to distinct exit codes.
"""

from __future__ import annotations


class PrevalidError(Exception):
    """Base class for all package errors."""


class ValidationError(PrevalidError, ValueError):
    """Invalid input data, parameters or configuration."""


class DataFormatError(ValidationError):
    """A dataset file that does not follow the CSV schema."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class NumericalError(PrevalidError, ArithmeticError):
    """A model could not be fit on the given data."""


class SingularDesignError(NumericalError):
    """Design matrix is rank deficient."""

    def __init__(self, n_columns: int, rank: int, what: str = "design matrix"):
        super().__init__(
            f"{what} is rank deficient: {n_columns} columns but rank {rank} "
            f"({n_columns - rank} dependent column(s))"
        )
        self.n_columns = n_columns
        self.rank = rank


class LeverageError(NumericalError):
    """An observation has leverage one, so its leave-one-out fit is undefined."""

    def __init__(self, row: int, leverage: float):
        super().__init__(f"row {row} has leverage {leverage:.15g}; leave-one-out prediction undefined")
        self.row = row
        self.leverage = leverage


class FitError(NumericalError):
    """An iterative fit failed (divergence, no feasible grid point, ...)."""


class FoldFitError(NumericalError):
    """An internal model failed on one pre-validation fold."""

    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"internal model failed on fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause
