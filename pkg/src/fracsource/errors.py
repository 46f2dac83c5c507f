"""Exception types shared across the package."""


class FracsourceError(Exception):
    """Base class for all package errors."""


class DomainError(FracsourceError, ValueError):
    """An argument lies outside the documented domain of an operation."""


class AccuracyError(FracsourceError):
    """A numerical routine could not certify the requested accuracy.

    Carries the best error bound that was achieved.
    """

    def __init__(self, message, achieved_bound=None):
        super().__init__(message)
        self.achieved_bound = achieved_bound


class ValidationError(FracsourceError, ValueError):
    """A model/config invariant is violated; names the violated clause."""

    def __init__(self, message, clause=None):
        super().__init__(message)
        self.clause = clause


class ShapeError(FracsourceError, ValueError):
    """Spectrum / coefficient / trace alignment mismatch."""


class EmptySpectrumError(FracsourceError, ValueError):
    """Eigenvalue cutoff below the first disc eigenvalue."""


class HorizonError(FracsourceError, ValueError):
    """Trace horizon too short for a Laplace transform without a tail model."""


class PoleProximityError(DomainError):
    """A Laplace point is too close to a pole of the transformed flux."""


class EmptySignalError(FracsourceError, ValueError):
    """No trace sample exceeds the onset detection threshold."""


class SensorGeometryError(FracsourceError, ValueError):
    """The two-sensor determinant 2i*sin(|m|(theta1-theta2)) is degenerate."""

    def __init__(self, message, m=None):
        super().__init__(message)
        self.m = m


class ConditioningError(FracsourceError):
    """Least-squares system rank-deficient beyond what damping can absorb."""


class BracketingError(FracsourceError, RuntimeError):
    """Internal failure to bracket a Bessel zero (should not occur in range)."""
