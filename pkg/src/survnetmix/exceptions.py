"""Exception and warning types used across the package."""


class DataValidationError(ValueError):
    """Input data violates a structural requirement."""


class DimensionMismatchError(DataValidationError):
    """Arrays that must share a dimension do not."""


class NonFiniteValueError(DataValidationError):
    """An array contains NaN or infinite entries."""


class InvalidIndicatorError(DataValidationError):
    """Event indicators contain values outside {0, 1}."""


class NonPositivePrecisionError(ValueError):
    """A noise precision parameter is not strictly positive."""


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be symmetric positive definite is not."""


class DegenerateSubgroupError(RuntimeError):
    """A subgroup's effective sample size fell below the working floor."""


class AllStartsDegenerateError(RuntimeError):
    """Every restart of the EM loop collapsed at least one subgroup."""


class AllFitsFailedError(RuntimeError):
    """Every grid point of a model-selection sweep failed."""


class MonotonicityError(RuntimeError):
    """An ascent step decreased its objective beyond numerical slack."""


class CensoringCalibrationError(RuntimeError):
    """Bisection could not match the requested censoring rate."""


class EmptyTruthError(ValueError):
    """True-positive rate is undefined when the true edge set is empty."""


class DegenerateSubgroupWarning(UserWarning):
    """A subgroup's responsibility mass is close to collapsing."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at its iteration limit."""
