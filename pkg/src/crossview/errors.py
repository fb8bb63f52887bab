"""Exception types shared across the package."""


class CrossViewError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CrossViewError, ValueError):
    """Array shapes are incompatible with an operation."""


class ConfigError(CrossViewError, ValueError):
    """A configuration value is out of range or inconsistent."""


class InputError(CrossViewError, ValueError):
    """An input value violates an operation's precondition."""


class EmptyInputError(CrossViewError, ValueError):
    """An operation received an empty set where at least one element is needed."""


class SingularInputError(CrossViewError, ValueError):
    """A matrix is too close to singular for a stable result."""


class DataError(CrossViewError, IOError):
    """A file on disk is missing, malformed or inconsistent."""


class NumericalError(CrossViewError, FloatingPointError):
    """A NaN or Inf appeared in a forward or backward pass."""
