"""Exception hierarchy shared across the engine.

CLI exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""


class MelinkError(Exception):
    """Base class for engine errors."""


class DimensionError(MelinkError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(MelinkError, ValueError):
    """Invalid configuration value (bad rate, indivisible heads, ...)."""


class DataError(MelinkError, ValueError):
    """Malformed or inconsistent dataset / checkpoint content."""


class EmptyContextError(MelinkError, ValueError):
    """Attention called with zero context rows; callers must apply a fallback."""


class NumericError(MelinkError, RuntimeError):
    """Non-finite values encountered where finiteness is required."""


class UsageError(MelinkError, ValueError):
    """Operation invoked in a way its contract forbids."""
