"""Exception types raised across the package."""


class ImsatError(Exception):
    """Base class for all package errors."""


class ConfigError(ImsatError, ValueError):
    """Invalid configuration or hyper-parameter."""


class ShapeError(ImsatError, ValueError):
    """Array dimensions do not line up."""


class DistributionError(ImsatError, ValueError):
    """Input is not a valid probability distribution."""


class StateError(ImsatError, RuntimeError):
    """Cached activations are stale or do not belong to the model."""


class DataFormatError(ImsatError, ValueError):
    """A data or checkpoint file could not be parsed."""


class ConstraintUnsatisfied(ImsatError):
    """No penalty weight in the schedule met the marginal constraint.

    The best model seen (smallest full-data KL) is kept on the exception so
    callers can still persist it.
    """

    def __init__(self, message, model=None, kl=None, report=None):
        super().__init__(message)
        self.model = model
        self.kl = kl
        self.report = report
