"""Exception types shared across the package."""


class PCurveError(Exception):
    """Base class for all package errors."""


class ParameterError(PCurveError, ValueError):
    """Invalid parameters (dimension, subset size, t, non-SPD metric...)."""


class ConeError(PCurveError, ArithmeticError):
    """A spectrum left the p-convex cone.

    ``worst_sum`` is the smallest p-subset sum seen; ``location`` is the
    offending grid index (or sample index) when one is known.
    """

    def __init__(self, message, worst_sum=float("nan"), location=None):
        super().__init__(message)
        self.worst_sum = float(worst_sum)
        self.location = location


class GeometryError(PCurveError):
    """Metric field is degenerate at some grid point."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class SolverError(PCurveError):
    """Linear solver breakdown."""


class StepFailure(SolverError):
    """Newton damping fell below the configured floor."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ContinuationFailure(SolverError):
    """Continuation step size underflowed; carries the last good state."""

    def __init__(self, message, last_state=None, trace=None):
        super().__init__(message)
        self.last_state = last_state
        self.trace = trace
