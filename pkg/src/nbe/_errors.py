"""Exception types shared by the public modules and both kernel backends."""


class NBEError(Exception):
    """Base class for errors raised by nbe."""


class DomainError(NBEError, ValueError):
    """An argument lies outside the domain of a numerical routine."""


class CholeskyError(NBEError, ValueError):
    """Cholesky decomposition met a nonpositive pivot.

    ``pivot`` is the 1-based index of the offending diagonal entry.
    """

    def __init__(self, pivot, value=float("nan")):
        self.pivot = int(pivot)
        self.value = float(value)
        super().__init__(
            f"matrix is not positive definite: pivot {self.pivot} is {self.value:.6g}"
        )


class SingularMatrixError(NBEError, ValueError):
    """A triangular solve met a zero diagonal entry."""


class SimulationError(NBEError, RuntimeError):
    """A simulator failed (iteration cap exceeded, bad covariance, ...)."""


class CheckpointError(NBEError, ValueError):
    """A checkpoint or data container is malformed or incompatible."""


class TrainingDivergence(NBEError, RuntimeError):
    """Training produced a non-finite risk."""
