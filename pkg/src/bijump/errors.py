"""Exception types shared across the package."""


class BijumpError(Exception):
    """Base class for all package errors."""


class DataError(BijumpError, ValueError):
    """Input data violates a precondition (missing hours, gaps, bad format)."""


class ParameterError(BijumpError, ValueError):
    """Model parameters violate their constraints."""


class NumericalError(BijumpError, ArithmeticError):
    """A numerical routine failed (singular matrix, non-finite objective)."""


class ManifestError(BijumpError):
    """Backtest output directory is missing, corrupt or belongs to another config."""
