"""Exception hierarchy. The CLI maps each class to a stable exit code."""


class DMHError(Exception):
    """Base class for all package errors."""


class ConfigError(DMHError, ValueError):
    """Invalid configuration or arguments (exit code 1)."""


class DataError(DMHError, ValueError):
    """Malformed, inconsistent or missing input data (exit code 2)."""


class NumericError(DMHError, ArithmeticError):
    """A computation produced a degenerate or non-finite result (exit code 3)."""
