"""Exception hierarchy shared by the numerical core."""

from typing import Sequence


class LodError(Exception):
    """Base class for every error raised by the multiscale core."""

    pass


class MeshError(LodError, ValueError):
    """Raised when a mesh or patch request violates its preconditions."""

    pass


class CoefficientError(LodError, ValueError):
    """Raised when coefficient parameters or values are invalid."""

    pass


class ConstraintRankError(LodError):
    """Raised when the constraint rows of a saddle problem are rank deficient."""

    def __init__(self, message: str, rows: Sequence[int]):
        super().__init__(f"{message}; offending rows: {list(rows)}")
        self.rows = list(rows)


class KKTResidualError(LodError):
    """Raised when a saddle solve misses its residual tolerance after refinement."""

    pass


class SolverError(LodError):
    """Raised when a direct factorization or solve fails."""

    pass


class IndefiniteSystemError(SolverError):
    """Raised when the multiscale Galerkin matrix is not positive definite."""

    pass
