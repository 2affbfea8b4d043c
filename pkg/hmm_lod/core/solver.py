"""Reference fine solve, multiscale Galerkin solve and error measures."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from hmm_lod.config import Settings, settings
from hmm_lod.core.correctors import MultiscaleBasis
from hmm_lod.core.errors import IndefiniteSystemError, SolverError
from hmm_lod.core.fem import Operator, as_matrix, energy_norm, l2_norm
from hmm_lod.core.linalg import DirectSolver, backward_error_check

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Fine solution, coarse coefficients (multiscale solves only), residual, wall time."""

    fine: np.ndarray
    coarse: Optional[np.ndarray]
    residual: float
    wall_time: float


@dataclass(frozen=True)
class ErrorReport:
    energy: float
    l2: float
    rel_energy: float
    rel_l2: float


def solve_reference(
    A: Operator, b: np.ndarray, settings_obj: Optional[Settings] = None
) -> SolveResult:
    """
    Fine-scale solution of A u = b with a sparse direct factorization.

    Raises:
        SolverError: if the factorization fails or the backward error stays
            above `solve_tolerance` after iterative refinement
    """
    if settings_obj is None:
        settings_obj = settings
    start = time.perf_counter()
    matrix = as_matrix(A)
    b = np.asarray(b, dtype=float)
    solver = DirectSolver(matrix)
    u = solver.solve_refined(
        b,
        backward_error_check(matrix, b, settings_obj.solve_tolerance),
        settings_obj.max_refinements,
    )
    residual = float(np.linalg.norm(b - matrix @ u))
    wall_time = time.perf_counter() - start
    logger.debug(f"Reference solve: {len(b)} dofs, residual={residual:.2e}")
    return SolveResult(fine=u, coarse=None, residual=residual, wall_time=wall_time)


def galerkin_matrix(basis: MultiscaleBasis, A: Operator) -> np.ndarray:
    """Dense coarse matrix B^T A B."""
    B = basis.matrix
    coarse = (B.T @ (as_matrix(A) @ B)).toarray()
    # symmetrize away round-off from the triple product
    return 0.5 * (coarse + coarse.T)


def solve_multiscale(
    basis: MultiscaleBasis,
    A: Operator,
    b: np.ndarray,
) -> SolveResult:
    """
    Galerkin solve on span(B): (B^T A B) c = B^T b and u_ms = B c.

    Raises:
        IndefiniteSystemError: if B^T A B is not positive definite
    """
    start = time.perf_counter()
    B = basis.matrix
    b = np.asarray(b, dtype=float)
    coarse_matrix = galerkin_matrix(basis, A)
    coarse_rhs = B.T @ b
    try:
        factor = scipy.linalg.cho_factor(coarse_matrix)
    except np.linalg.LinAlgError as e:
        raise IndefiniteSystemError(
            f"coarse Galerkin matrix ({coarse_matrix.shape[0]} dofs) is not "
            f"positive definite: {e}"
        ) from e
    c = scipy.linalg.cho_solve(factor, coarse_rhs)
    if not np.all(np.isfinite(c)):
        raise SolverError("multiscale solve produced non-finite coefficients")
    residual = float(np.linalg.norm(coarse_matrix @ c - coarse_rhs))
    wall_time = time.perf_counter() - start
    logger.debug(
        f"Multiscale solve: {len(c)} coarse dofs, residual={residual:.2e}"
    )
    return SolveResult(fine=B @ c, coarse=c, residual=residual, wall_time=wall_time)


def error_report(
    u_ref: np.ndarray, u_ms: np.ndarray, A: Operator, M_f: Operator
) -> ErrorReport:
    """Energy and L2 errors of u_ms against u_ref, absolute and relative."""
    difference = np.asarray(u_ref, dtype=float) - np.asarray(u_ms, dtype=float)
    energy_err = energy_norm(A, difference)
    l2_err = l2_norm(M_f, difference)
    ref_energy = energy_norm(A, u_ref)
    ref_l2 = l2_norm(M_f, u_ref)
    return ErrorReport(
        energy=energy_err,
        l2=l2_err,
        rel_energy=energy_err / ref_energy if ref_energy > 0 else 0.0,
        rel_l2=l2_err / ref_l2 if ref_l2 > 0 else 0.0,
    )


def relative(value: float, scale: float) -> float:
    """value / scale, or value itself when the scale vanishes."""
    return value / scale if scale > 0 and math.isfinite(scale) else value
