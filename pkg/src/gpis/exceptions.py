"""Exception types shared across the package."""


class GpisError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(GpisError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(GpisError, ArithmeticError):
    """A numerical routine failed (non-positive-definite matrix, non-finite
    gradient, ...).

    ``pivot`` carries the 1-based index of the failing Cholesky pivot when the
    error came from a factorization, else None.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class CheckpointFormatError(GpisError, ValueError):
    """A checkpoint file is corrupt, truncated or has an unsupported version."""
