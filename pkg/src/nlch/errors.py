"""Exception hierarchy shared by all modules."""


class NLCHError(Exception):
    """Base class for library errors."""


class ConstructionError(NLCHError, ValueError):
    """Invalid parameters when building a kernel, potential or grid."""


class DomainError(NLCHError, ValueError):
    """A function was evaluated outside its domain (singularity, endpoints)."""


class SizingError(NLCHError, MemoryError):
    """A dense allocation would exceed the configured memory budget."""


class ConvergenceError(NLCHError, ArithmeticError):
    """An iterative or direct solve did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepRejected(ConvergenceError):
    """Newton failed for one time step; the caller may retry with a smaller dt."""


class ValidationError(NLCHError, ValueError):
    """Configuration or input file failed validation.

    ``problems`` holds every violation found, not only the first one.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SnapshotError(ValidationError):
    """Malformed, truncated or inconsistent snapshot/matrix file."""
