"""Exception hierarchy shared by every module."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class CriticalHurstError(DomainError):
    """The Hurst parameter sits exactly on an excluded critical value."""


class HurstWindowError(DomainError):
    """The (H, q) pair lies outside the admissible window of an operation."""


class DivergentIntegralError(DomainError):
    """The parameters describe an integral that does not converge."""


class SingularityError(DomainError):
    """Evaluation at a point where the function is singular."""


class EmbeddingError(RuntimeError):
    """Circulant embedding produced a negative eigenvalue beyond tolerance."""


class CholeskyError(RuntimeError):
    """Dense covariance factorisation failed."""
