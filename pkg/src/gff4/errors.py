"""Exception types shared across the package.

The CLI maps these onto exit codes: parameter/geometry rejections exit 1,
numerical failures (factorization, degenerate estimates, precision loss)
exit 2.  Raise sites prefix messages with "module.operation:" so failures
name where they happened.
"""


class DomainError(ValueError):
    """Argument outside a function's mathematical domain."""


class ParameterError(ValueError):
    """Invalid or inconsistent configuration parameters."""


class GeometryError(ValueError):
    """Sphere pair in a geometry with no covariance formula (overlapping/tangent)."""


class StateError(RuntimeError):
    """Operation called on an object in the wrong state (e.g. unfactorized matrix)."""


class FactorizationError(RuntimeError):
    """Covariance matrix could not be Cholesky-factorized within the jitter ladder."""


class DegenerateEstimateError(RuntimeError):
    """A Monte Carlo estimate degenerated (e.g. zero successes for a rare event)."""


class PrecisionLossError(ArithmeticError):
    """Result would be dominated by floating-point cancellation or underflow."""
