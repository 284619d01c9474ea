"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class UnsupportedOrderError(ValueError):
    """Requested order is beyond the supported maximum."""


class SingularityError(ValueError):
    """Evaluation at a singular point (source location or origin)."""


class NumericError(ArithmeticError):
    """A numerical routine produced a non-finite or unconverged result."""


class OptimizationError(RuntimeError):
    """Optimizer diverged; carries the last feasible iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class IngestionError(ValueError):
    """Malformed input file or configuration."""


class DegenerateError(ValueError):
    """Zero-energy input where a normalization is required."""
