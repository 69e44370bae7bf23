"""Exception hierarchy shared by the solver, simulator and CLI."""


class MFGPriceError(Exception):
    """Base class for all package errors."""


class ModelValidationError(MFGPriceError):
    """Raised when a model or experiment config violates its invariants."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(MFGPriceError):
    """A numerical failure located at a specific time."""

    def __init__(self, message, t=None):
        self.t = t
        if t is not None:
            message = f"{message} (t = {t:.12g})"
        super().__init__(message)


class SingularityError(NumericalError):
    """1 + a_2^3 dropped below the singularity floor; the price volatility is undefined."""


class BlowUpError(NumericalError):
    """A coefficient or path value diverged (Riccati explosion or overflow guard)."""


class TimeRangeError(MFGPriceError, ValueError):
    """Evaluation requested outside the solved time interval."""
