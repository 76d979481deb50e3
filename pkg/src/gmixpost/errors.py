"""Exception hierarchy shared by all gmixpost modules."""


class GmixpostError(Exception):
    """Base class for all library errors."""


class ShapeError(GmixpostError):
    """Operands have incompatible dimensions."""


class DomainError(GmixpostError):
    """Input violates a mathematical domain requirement (e.g. non-SPD matrix)."""


class SupportError(GmixpostError):
    """Point lies outside the support of a density."""


class NumericalError(GmixpostError):
    """A numerical procedure failed (factorization, solver non-convergence, overflow)."""


class ArgError(GmixpostError):
    """Invalid argument combination or empty input."""


class InitError(GmixpostError):
    """Sampler could not be initialized (non-finite target at the start point)."""


class DivergenceError(GmixpostError):
    """Sampler diverged (persistent non-finite proposals)."""


class FeasibilityError(GmixpostError):
    """Rejection sampler acceptance probability underflowed."""


class OptimError(GmixpostError):
    """Optimizer failed to converge. Carries the iterate trace when available."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FormatError(GmixpostError):
    """Persisted file is corrupt or truncated. Carries the byte offset."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
