class SpatioJointError(Exception):
    """Base class for package errors."""


class ValidationError(SpatioJointError, ValueError):
    """Invalid input data, configuration or parameters."""


class DomainError(SpatioJointError, ValueError):
    """A quantity evaluated outside its mathematical domain."""


class NumericalError(SpatioJointError, RuntimeError):
    """Estimation or optimisation failed numerically."""


class BarrierError(NumericalError):
    """No start point satisfies the event-time barrier (tau < observed event time)."""
