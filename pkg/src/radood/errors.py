"""Exception taxonomy shared by all modules."""


class RadoodError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(RadoodError, ValueError):
    """An argument violates a documented precondition."""


class SingularMatrixError(RadoodError):
    """A matrix is numerically singular where positive definiteness is required."""


class ConvergenceError(RadoodError):
    """An iterative estimator failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InsufficientDataError(RadoodError):
    """Not enough samples to carry out the requested operation."""


class FormatError(RadoodError):
    """A serialized artifact is malformed."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class NumericError(RadoodError):
    """A numeric computation produced non-finite values."""


class TrainingError(RadoodError):
    """Model optimization diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DependencyError(RadoodError):
    """A pipeline stage ran before the stage it depends on."""


class ConfigError(RadoodError):
    """An experiment configuration file is invalid."""
