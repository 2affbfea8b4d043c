"""Sparse direct solves with residual checks and bounded iterative refinement."""

from __future__ import annotations

import logging
import threading
from typing import Callable, Optional, Type

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_none,
)

from hmm_lod.core.errors import LodError, SolverError

logger = logging.getLogger(__name__)

Acceptance = Callable[[np.ndarray, np.ndarray], bool]


class DirectSolver:
    """
    SuperLU factorization of a square sparse matrix, reused across right-hand sides.

    The factorization is read-only after construction.
    """

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = sp.csc_matrix(matrix)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise SolverError(f"cannot factor non-square matrix {self.matrix.shape}")
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as e:
            raise SolverError(f"sparse factorization failed: {e}") from e
        # SuperLU handles are not safe to share across threads
        self._lock = threading.Lock()
        logger.debug(
            f"Factored {self.matrix.shape[0]}x{self.matrix.shape[1]} system "
            f"(nnz={self.matrix.nnz}, factor nnz={self._lu.nnz})"
        )

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        with self._lock:
            solution = self._lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(solution)):
            raise SolverError("direct solve produced non-finite values")
        return solution

    def solve_refined(
        self,
        rhs: np.ndarray,
        acceptable: Acceptance,
        max_refinements: int,
        error_cls: Type[LodError] = SolverError,
    ) -> np.ndarray:
        """
        Solve and refine x += A^{-1}(b - A x) until `acceptable(x, residual)` holds.

        Raises:
            error_cls: if the residual is still unacceptable after
                `max_refinements` refinement steps
        """
        rhs = np.asarray(rhs, dtype=float)
        state = {"x": self.solve(rhs)}
        for attempt in Retrying(
            stop=stop_after_attempt(max_refinements + 1),
            wait=wait_none(),
            retry=retry_if_exception_type(error_cls),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        ):
            with attempt:
                residual = rhs - self.matrix @ state["x"]
                if not acceptable(state["x"], residual):
                    state["x"] = state["x"] + self.solve(residual)
                    raise error_cls(
                        f"residual {np.linalg.norm(residual):.3e} above tolerance "
                        f"for {self.size}x{self.size} system"
                    )
        return state["x"]


def backward_error_check(
    matrix: sp.spmatrix, rhs: np.ndarray, tolerance: float, norm_A: Optional[float] = None
) -> Acceptance:
    """Acceptance test ||b - A x|| <= tol * (||A|| ||x|| + ||b||)."""
    if norm_A is None:
        norm_A = float(abs(matrix).sum(axis=1).max()) if matrix.shape[0] else 0.0
    norm_b = float(np.linalg.norm(rhs, np.inf))

    def acceptable(x: np.ndarray, residual: np.ndarray) -> bool:
        scale = norm_A * float(np.linalg.norm(x, np.inf)) + norm_b
        return float(np.linalg.norm(residual, np.inf)) <= tolerance * scale

    return acceptable
