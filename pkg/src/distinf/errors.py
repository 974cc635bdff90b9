"""Exception types raised across the package.

Every error subclasses :class:`DistInfError`, which is itself a
``ValueError`` so callers that only care about bad input can catch that.
"""


class DistInfError(ValueError):
    """Base class for all package errors."""


class InsufficientData(DistInfError):
    """A sampling step ran out of rows in one attribute class."""


class DegenerateColumn(DistInfError):
    """A binary column is constant, so a correlation is undefined."""


class MissingColumn(DistInfError):
    pass


class NonBinaryLabel(DistInfError):
    pass


class NonNumericFeature(DistInfError):
    pass


class NonFiniteLoss(DistInfError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class SingleClassData(DistInfError):
    pass


class DimensionMismatch(DistInfError):
    pass


class ShapeMismatch(DistInfError):
    pass


class EmptyBank(DistInfError):
    pass


class ZeroDenominator(DistInfError):
    pass


class ConfigError(DistInfError):
    """Invalid experiment configuration (CLI exit code 2)."""


class ExperimentFailed(RuntimeError):
    """A run aborted part-way; carries whatever was completed."""

    def __init__(self, message: str, partial=None, context: dict | None = None):
        super().__init__(message)
        self.partial = partial
        self.context = context or {}
