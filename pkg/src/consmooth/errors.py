"""Exception hierarchy shared by every module of the package."""


class SmoothingError(Exception):
    """Base class for all errors raised by consmooth."""


class DomainError(SmoothingError, ValueError):
    """An argument lies outside [0, 1] or is otherwise out of range."""


class FactorizationError(SmoothingError):
    """The Gram matrix could not be factorized even after jittering."""


class MeshMismatchError(SmoothingError, ValueError):
    """Two objects that must share a mesh were built on different ones."""


class InfeasibleError(SmoothingError):
    """The constraint set has no point compatible with the problem."""


class ContradictionError(InfeasibleError, ValueError):
    """The declared constraint atoms are mutually contradictory."""


class PreconditionError(SmoothingError, ValueError):
    """A caller-side precondition of an operation does not hold."""


class SizeError(SmoothingError, ValueError):
    """A problem is too large for the requested (exhaustive) method."""


class SolverError(SmoothingError):
    """The QP solver failed to produce a certified solution."""


class MaxIterationsError(SolverError):
    """The active-set iteration budget ran out.

    The best iterate and its KKT residuals are attached so callers can
    inspect how far from optimal the run ended.
    """

    def __init__(self, message, coeffs=None, residuals=None, iterations=None):
        super().__init__(message)
        self.coeffs = coeffs
        self.residuals = residuals
        self.iterations = iterations


class LowAcceptanceError(SmoothingError):
    """Rejection sampling ran out of attempts before collecting enough draws."""

    def __init__(self, message, rate, batch=None):
        super().__init__(message)
        self.rate = rate
        self.batch = batch
