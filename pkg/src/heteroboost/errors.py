"""Exception hierarchy shared across the package."""


class HeteroBoostError(Exception):
    """Base class for all package errors."""


class DataFormatError(HeteroBoostError):
    """Input file is missing columns or holds unparsable values."""


class GapError(DataFormatError):
    """Periods of a series are non-contiguous or duplicated."""


class SpecError(HeteroBoostError):
    """Invalid synthetic-data or experiment specification."""


class PreconditionError(HeteroBoostError, ValueError):
    """An operation was called outside its documented domain."""


class DegenerateSeriesError(PreconditionError):
    """The series has (numerically) zero variance."""


class ShapeError(HeteroBoostError, ValueError):
    """Array shapes do not match what a model expects."""


class SingularDesignError(HeteroBoostError):
    """A regression design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class TrainingDivergedError(HeteroBoostError):
    """Training loss became non-finite."""


class ConvergenceError(HeteroBoostError):
    """An iterative optimiser failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class BudgetError(HeteroBoostError):
    """No clustering satisfies the maintenance budget."""


class StrategyError(HeteroBoostError):
    """A stage-two strategy was requested that the fitted model cannot support."""


class ResidualModeError(HeteroBoostError):
    """Multiplicative residuals requested on non-positive (shifted) values."""
