"""
L2-projection compression P0, the splitting V = V_h + V_f and the constrained
quadratic minimizer behind the reconstruction operators.

For a fine function v the constraint P0 v = v_h reads C v = M_H v_h with
C = P^T M_f, so V_f is the kernel of C.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from hmm_lod.config import Settings, settings
from hmm_lod.core.errors import ConstraintRankError, KKTResidualError, SolverError
from hmm_lod.core.fem import (
    DofSpace,
    Level,
    Operator,
    SparseOperator,
    as_matrix,
    assemble_mass,
    energy,
    prolongation,
)
from hmm_lod.core.linalg import DirectSolver, backward_error_check
from hmm_lod.core.mesh import TwoLevelMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ProjectionKit:
    """Operators realizing P0: prolongation P, masses M_f and M_H, constraint C."""

    P: SparseOperator
    M_f: SparseOperator
    M_H: SparseOperator
    C: SparseOperator
    mass_solver: DirectSolver

    @property
    def num_coarse(self) -> int:
        return self.C.shape[0]

    @property
    def num_fine(self) -> int:
        return self.C.shape[1]


def build_projection_kit(mesh: TwoLevelMesh) -> ProjectionKit:
    P = prolongation(mesh)
    M_f = assemble_mass(mesh, Level.FINE)
    M_H = assemble_mass(mesh, Level.COARSE)
    C = SparseOperator(
        (P.matrix.T @ M_f.matrix).tocsr(),
        DofSpace.COARSE_INTERIOR,
        DofSpace.FINE_INTERIOR,
    )
    return ProjectionKit(P=P, M_f=M_f, M_H=M_H, C=C, mass_solver=DirectSolver(M_H.matrix))


def apply_P0(
    kit: ProjectionKit, v: np.ndarray, settings_obj: Optional[Settings] = None
) -> np.ndarray:
    """
    Coarse coefficients x of P0 v, i.e. the solution of M_H x = C v.

    Raises:
        SolverError: if the mass solve does not reach the configured backward error
    """
    if settings_obj is None:
        settings_obj = settings
    v = np.asarray(v, dtype=float)
    if v.shape != (kit.num_fine,):
        raise ValueError(f"expected a fine function of length {kit.num_fine}, got {v.shape}")

    rhs = kit.C.matrix @ v
    return kit.mass_solver.solve_refined(
        rhs,
        backward_error_check(kit.M_H.matrix, rhs, settings_obj.solve_tolerance),
        settings_obj.max_refinements,
    )


@dataclass(frozen=True, eq=False)
class SaddleSolution:
    """Minimizer v, multiplier mu (one entry per constraint row) and KKT residuals."""

    v: np.ndarray
    mu: np.ndarray
    stationarity: float
    feasibility: float
    active_rows: np.ndarray


def _offending_rows(C_active: sp.csr_matrix, active: np.ndarray) -> np.ndarray:
    rows, cols = C_active.shape
    if rows > cols:
        # more constraints than unknowns is always rank deficient
        return active[cols:]
    R, pivots = scipy.linalg.qr(C_active.toarray().T, mode="r", pivoting=True)
    diagonal = np.abs(np.diag(R))
    threshold = max(rows, cols) * np.finfo(float).eps * diagonal[0]
    rank = int((diagonal > threshold).sum())
    return np.sort(active[pivots[rank:]])


class SaddleSystem:
    """
    Factored KKT system [[A, C^T], [C, 0]] for min 1/2 v^T A v - rhs^T v s.t. C v = target.

    All-zero constraint rows (coarse functions not meeting the dof set) are pruned;
    their multipliers are reported as zero. Constraint rows are rescaled to the
    magnitude of A before factoring.
    """

    def __init__(
        self,
        A_sub: Operator,
        C_sub: Operator,
        settings_obj: Optional[Settings] = None,
        check_rank: bool = True,
    ):
        if settings_obj is None:
            settings_obj = settings
        self.settings = settings_obj
        self.A = sp.csr_matrix(as_matrix(A_sub))
        C = sp.csr_matrix(as_matrix(C_sub), dtype=float)
        if C.shape[1] != self.A.shape[0]:
            raise ValueError(
                f"constraint columns ({C.shape[1]}) do not match dofs ({self.A.shape[0]})"
            )
        C.eliminate_zeros()
        self.num_rows = C.shape[0]
        self.active = np.flatnonzero(np.diff(C.indptr) > 0)
        self.C = C[self.active]

        if check_rank and len(self.active):
            offending = _offending_rows(self.C, self.active)
            if len(offending):
                raise ConstraintRankError(
                    "constraint rows are rank deficient after pruning", offending
                )

        self.scale = 1.0
        if self.C.nnz:
            self.scale = float(sparse_norm(self.A, np.inf) / sparse_norm(self.C, np.inf))
        kkt = sp.bmat(
            [[self.A, self.scale * self.C.T], [self.scale * self.C, None]]
            if len(self.active)
            else [[self.A]],
            format="csc",
        )
        try:
            self._solver = DirectSolver(kkt)
        except SolverError as e:
            raise SolverError(f"KKT factorization failed: {e}") from e

    @property
    def num_dofs(self) -> int:
        return self.A.shape[0]

    def solve(
        self, rhs: np.ndarray, target: Optional[np.ndarray] = None
    ) -> SaddleSolution:
        """
        Solve the KKT system for one right-hand side.

        Raises:
            ConstraintRankError: if target is nonzero on a pruned (zero) row
            KKTResidualError: if the residuals exceed tol * (1 + ||rhs|| + ||target||)
                after iterative refinement
        """
        rhs = np.asarray(rhs, dtype=float)
        target = (
            np.zeros(self.num_rows) if target is None else np.asarray(target, float)
        )
        pruned = np.setdiff1d(np.arange(self.num_rows), self.active)
        if len(pruned) and np.any(target[pruned] != 0.0):
            raise ConstraintRankError(
                "nonzero target on constraint rows that do not meet the dof set",
                pruned[target[pruned] != 0.0],
            )

        n = self.num_dofs
        active_target = target[self.active]
        full_rhs = np.concatenate([rhs, self.scale * active_target])
        bound = self.settings.kkt_tolerance * (
            1.0 + np.linalg.norm(rhs) + np.linalg.norm(target)
        )

        def acceptable(x: np.ndarray, residual: np.ndarray) -> bool:
            stationarity = np.linalg.norm(residual[:n])
            feasibility = np.linalg.norm(residual[n:]) / self.scale
            return stationarity <= bound and feasibility <= bound

        x = self._solver.solve_refined(
            full_rhs, acceptable, self.settings.max_refinements, KKTResidualError
        )
        v = x[:n]
        mu = np.zeros(self.num_rows)
        mu[self.active] = self.scale * x[n:]
        stationarity = float(
            np.linalg.norm(self.A @ v + self.C.T @ mu[self.active] - rhs)
        )
        feasibility = float(np.linalg.norm(self.C @ v - active_target))
        logger.debug(
            f"Saddle solve ({n} dofs, {len(self.active)} constraints): "
            f"stationarity={stationarity:.2e}, feasibility={feasibility:.2e}"
        )
        return SaddleSolution(
            v=v,
            mu=mu,
            stationarity=stationarity,
            feasibility=feasibility,
            active_rows=self.active,
        )


def solve_constrained(
    A_sub: Operator,
    C_sub: Operator,
    rhs: np.ndarray,
    target: Optional[np.ndarray] = None,
    settings_obj: Optional[Settings] = None,
) -> SaddleSolution:
    """Minimize 1/2 v^T A v - rhs^T v subject to C v = target via a KKT solve."""
    return SaddleSystem(A_sub, C_sub, settings_obj=settings_obj).solve(rhs, target)


def reconstruct(
    kit: ProjectionKit,
    A: Operator,
    v_h: np.ndarray,
    b: Optional[np.ndarray] = None,
    system: Optional[SaddleSystem] = None,
    settings_obj: Optional[Settings] = None,
) -> np.ndarray:
    """
    Reconstruction of a coarse function.

    With a load vector b this is R(v_h) = argmin_{P0 v = v_h} J(v); without it,
    R_h(v_h) = argmin_{P0 v = v_h} J0(v).
    """
    if system is None:
        system = SaddleSystem(A, kit.C, settings_obj=settings_obj)
    rhs = np.zeros(kit.num_fine) if b is None else b
    target = kit.M_H.matrix @ np.asarray(v_h, dtype=float)
    return system.solve(rhs, target).v


def multiplier_projection(
    kit: ProjectionKit, A: Operator, b: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """
    Coarse coefficients of P0 mu determined by (P0 mu, P0 w) = (f, w) - a(u, w)
    for every fine w, i.e. the least-squares solution of C^T mu = b - A u.
    """
    C = kit.C.matrix
    residual = b - as_matrix(A) @ u
    normal = DirectSolver((C @ C.T).tocsc())
    return normal.solve(C @ residual)


def macro_energy(
    kit: ProjectionKit,
    A: Operator,
    b: np.ndarray,
    v_h: np.ndarray,
    system: Optional[SaddleSystem] = None,
) -> float:
    """J_h(v_h) = min over P0 v = v_h of J(v)."""
    return energy(A, b, reconstruct(kit, A, v_h, b=b, system=system))[0]
