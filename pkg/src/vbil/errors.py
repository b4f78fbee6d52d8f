"""Exception types raised across the package."""


class VbilError(Exception):
    """Base class for all package errors."""


class DomainError(VbilError, ValueError):
    """An argument lies outside the support of a density or simulator."""


class InvalidStateError(VbilError, ValueError):
    """A parameter vector is not usable (non-finite, violates constraints)."""


class ConditioningError(VbilError, ArithmeticError):
    """A matrix that must be inverted is singular or badly conditioned.

    The offending natural-parameter vector is kept on ``lam`` when known.
    """

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class ContractError(VbilError, ValueError):
    """A caller broke a shape or count contract."""


class CapabilityError(VbilError, ValueError):
    """A request exceeds what the implementation supports."""


class DegenerateSampleError(VbilError, ValueError):
    """A sample is too degenerate for a statistic to be defined."""


class ConfigError(VbilError, ValueError):
    """Configuration is malformed or inconsistent."""


class NumericalAbort(VbilError, RuntimeError):
    """A long-running procedure gave up after repeated numerical failure."""
