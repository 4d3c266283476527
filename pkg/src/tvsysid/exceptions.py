"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A factorization or solve failed beyond the configured fallbacks."""


class InsufficientDataError(ValueError):
    """Not enough samples for the requested operation (need count > taps)."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. zero reference norm)."""
