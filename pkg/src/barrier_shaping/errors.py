"""Exception hierarchy shared by every module of the package."""


class BarrierShapingError(Exception):
    """Base class for all errors raised by :mod:`barrier_shaping`."""


class ConfigurationError(BarrierShapingError, ValueError):
    """Invalid static configuration (bad index, bad bound, bad shape)."""


class NumericInputError(BarrierShapingError, ValueError):
    """Non-finite or dimensionally inconsistent numeric input."""


class UsageError(BarrierShapingError, RuntimeError):
    """An object was used in a state that does not allow the call."""


class DataError(BarrierShapingError, ValueError):
    """Recorded data is inconsistent or insufficient for a metric."""


class UndefinedMetricError(BarrierShapingError, ArithmeticError):
    """A metric is mathematically undefined for the given input."""
