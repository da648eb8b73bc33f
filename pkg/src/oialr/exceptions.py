"""Exception hierarchy shared by every oialr module."""


class OIALRError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(OIALRError, ValueError):
    """Raised when array dimensions do not line up."""


class ConvergenceError(OIALRError, RuntimeError):
    """Raised when an iterative factorization hits its iteration cap."""

    def __init__(self, message, iterations):
        super().__init__(message)
        self.iterations = iterations


class ConfigError(OIALRError, ValueError):
    """Raised for invalid hyperparameters or run configuration files."""


class StaleCacheError(OIALRError, RuntimeError):
    """Raised when a forward cache no longer matches the model it came from."""


class TrainingDivergedError(OIALRError, RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class DataFormatError(OIALRError, ValueError):
    """Base class for malformed dataset files."""


class IdxMagicError(DataFormatError):
    pass


class IdxTruncatedError(DataFormatError):
    pass


class IdxCountMismatchError(DataFormatError):
    pass


class CheckpointError(OIALRError, ValueError):
    """Raised for unreadable or corrupt checkpoint files."""
