class SZOException(Exception):
    """Base class of every error raised by this library."""


class ConfigError(SZOException):
    """An invalid hyperparameter, flag or configuration key."""


class DataError(SZOException):
    """An input file could not be read or is malformed."""


class NumericalError(SZOException):
    """A non-finite value appeared during optimisation."""


class DimensionMismatch(SZOException, ValueError):
    """Two sparse vectors of different dimension were combined."""
