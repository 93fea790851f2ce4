"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid user-supplied parameters (bad band, unknown config key, ...)."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class DomainError(ValueError):
    """A parameter lies outside the range where an operator is defined."""


class PreconditionError(ValueError):
    """An operation was called with arguments violating its precondition."""


class UndefinedRatioError(ValueError):
    """A bound ratio has no admissible sample (e.g. the finite difference vanishes)."""


class InsufficientSamplingError(ValueError):
    """A ledger is too sparse for finite-difference time derivatives."""


class BlowUpError(RuntimeError):
    """Non-finite coefficients appeared during time stepping.

    ``state`` holds the last finite solver state for diagnostics.
    """

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state
