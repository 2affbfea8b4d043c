"""P1 assembly and the quadratic energy J(v) = 1/2 a(v,v) - (f,v)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from hmm_lod.core.coefficient import CoefficientField
from hmm_lod.core.errors import MeshError
from hmm_lod.core.mesh import TwoLevelMesh

logger = logging.getLogger(__name__)

Forcing = Callable[[np.ndarray], np.ndarray]


class DofSpace(str, Enum):
    """Index space of an operator's rows or columns."""

    COARSE_INTERIOR = "coarse-interior"
    FINE_INTERIOR = "fine-interior"
    COARSE_ALL = "coarse-all"
    FINE_ALL = "fine-all"


class Level(str, Enum):
    COARSE = "coarse"
    FINE = "fine"


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Sparse matrix tagged with the dof spaces of its rows and columns."""

    matrix: sp.csr_matrix
    row_space: DofSpace
    col_space: DofSpace

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def T(self) -> "SparseOperator":
        return SparseOperator(self.matrix.T.tocsr(), self.col_space, self.row_space)

    def __matmul__(self, other):
        return self.matrix @ as_matrix(other)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


Operator = Union[SparseOperator, sp.spmatrix, np.ndarray]


def as_matrix(op):
    """Unwrap a SparseOperator; other inputs are returned unchanged."""
    if isinstance(op, SparseOperator):
        return op.matrix
    return op


# Quadrature on the reference simplex as (barycentric points, weights / measure).
# Simpson in 1D, edge midpoints in 2D: both integrate quadratics exactly.
_LOAD_RULES = {
    1: (np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]), np.array([1, 4, 1]) / 6.0),
    2: (
        np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
        np.full(3, 1.0 / 3.0),
    ),
}


def element_geometry(
    coords: np.ndarray, elements: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of the barycentric hats and element measures.

    Returns:
        grads of shape (elements, d+1, d) and measures of shape (elements,)
    """
    vertices = coords[elements]
    dimension = vertices.shape[2]
    # columns are the edge vectors x_i - x_0
    edges = np.transpose(vertices[:, 1:, :] - vertices[:, :1, :], (0, 2, 1))
    inverse = np.linalg.inv(edges)
    grads = np.empty((len(elements), dimension + 1, dimension))
    grads[:, 1:, :] = inverse
    grads[:, 0, :] = -inverse.sum(axis=1)
    measures = np.abs(np.linalg.det(edges)) / math.factorial(dimension)
    return grads, measures


def _scatter(elements: np.ndarray, local: np.ndarray, size: int) -> sp.csr_matrix:
    nloc = elements.shape[1]
    rows = np.broadcast_to(elements[:, :, None], (len(elements), nloc, nloc))
    cols = np.broadcast_to(elements[:, None, :], (len(elements), nloc, nloc))
    return sp.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=(size, size)
    ).tocsr()


def _restrict(matrix: sp.csr_matrix, rows: np.ndarray, cols: np.ndarray):
    return matrix[rows][:, cols].tocsr()


def assemble_stiffness(
    mesh: TwoLevelMesh,
    coeff: CoefficientField,
    element_mask: Optional[np.ndarray] = None,
    include_boundary: bool = False,
) -> SparseOperator:
    """
    Fine stiffness a(lambda_i, lambda_j) = sum_K a_K int_K grad lambda_i . grad lambda_j.

    One-point quadrature is exact because the coefficient is constant per element.

    Args:
        mesh: two-level mesh
        coeff: per-fine-element coefficient
        element_mask: optional boolean mask restricting the sum to some elements
        include_boundary: keep boundary nodes (default: interior dofs only)
    """
    if coeff.values.shape != (len(mesh.fine_elements),):
        raise MeshError(
            f"coefficient has {coeff.values.shape[0]} values for "
            f"{len(mesh.fine_elements)} fine elements"
        )
    elements = mesh.fine_elements
    values = coeff.values
    if element_mask is not None:
        elements = elements[element_mask]
        values = values[element_mask]

    grads, measures = element_geometry(mesh.fine_coords, elements)
    local = np.einsum("eid,ejd->eij", grads, grads) * (values * measures)[:, None, None]
    full = _scatter(elements, local, len(mesh.fine_grid))
    if include_boundary:
        return SparseOperator(full, DofSpace.FINE_ALL, DofSpace.FINE_ALL)
    free = mesh.fine_free
    return SparseOperator(
        _restrict(full, free, free), DofSpace.FINE_INTERIOR, DofSpace.FINE_INTERIOR
    )


def assemble_mass(
    mesh: TwoLevelMesh, level: Level | str, include_boundary: bool = False
) -> SparseOperator:
    """Consistent (not lumped) P1 mass matrix on the coarse or fine level."""
    level = Level(level)
    if level == Level.FINE:
        coords, elements, free = mesh.fine_coords, mesh.fine_elements, mesh.fine_free
        spaces = (DofSpace.FINE_INTERIOR, DofSpace.FINE_ALL)
    else:
        coords, elements, free = (
            mesh.coarse_coords,
            mesh.coarse_elements,
            mesh.coarse_free,
        )
        spaces = (DofSpace.COARSE_INTERIOR, DofSpace.COARSE_ALL)

    nloc = mesh.dimension + 1
    _, measures = element_geometry(coords, elements)
    reference = (np.ones((nloc, nloc)) + np.eye(nloc)) / ((nloc) * (nloc + 1))
    local = measures[:, None, None] * reference[None, :, :]
    full = _scatter(elements, local, len(coords))
    if include_boundary:
        return SparseOperator(full, spaces[1], spaces[1])
    return SparseOperator(_restrict(full, free, free), spaces[0], spaces[0])


def assemble_load(mesh: TwoLevelMesh, f: Forcing) -> np.ndarray:
    """
    Load vector (f, lambda_i) on the interior fine dofs.

    Args:
        f: callable mapping points of shape (npts, d) to values of shape (npts,)
    """
    points_bary, weights = _LOAD_RULES[mesh.dimension]
    vertices = mesh.fine_coords[mesh.fine_elements]
    _, measures = element_geometry(mesh.fine_coords, mesh.fine_elements)

    points = np.einsum("qi,eid->eqd", points_bary, vertices)
    values = np.asarray(f(points.reshape(-1, mesh.dimension)), dtype=float)
    values = np.broadcast_to(values, (points.shape[0] * points.shape[1],)).reshape(
        points.shape[:2]
    )
    local = measures[:, None] * np.einsum("eq,q,qi->ei", values, weights, points_bary)

    full = np.zeros(len(mesh.fine_grid))
    np.add.at(full, mesh.fine_elements, local)
    return full[mesh.fine_free]


def prolongation(mesh: TwoLevelMesh) -> SparseOperator:
    """
    Embedding V_h -> V: column z holds the fine nodal values of the coarse hat at z.

    Values are fractions j / 2**r and therefore exact in floating point.
    """
    n, ratio = mesh.n, mesh.ratio
    grid = mesh.fine_grid
    cell = np.minimum(grid // ratio, n - 1)
    s = (grid - cell * ratio) / ratio

    if mesh.dimension == 1:
        left = cell[:, 0]
        nodes = np.column_stack([left, left + 1])
        vals = np.column_stack([1.0 - s[:, 0], s[:, 0]])
    else:
        sx, sy = s[:, 0], s[:, 1]
        v00 = cell[:, 0] + cell[:, 1] * (n + 1)
        v10, v01 = v00 + 1, v00 + n + 1
        v11 = v01 + 1
        lower = sy <= sx
        nodes = np.where(
            lower[:, None],
            np.column_stack([v00, v10, v11]),
            np.column_stack([v00, v11, v01]),
        )
        vals = np.where(
            lower[:, None],
            np.column_stack([1.0 - sx, sx - sy, sy]),
            np.column_stack([1.0 - sy, sx, sy - sx]),
        )

    rows = np.repeat(np.arange(len(grid)), nodes.shape[1])
    keep = vals.ravel() != 0.0
    full = sp.coo_matrix(
        (vals.ravel()[keep], (rows[keep], nodes.ravel()[keep])),
        shape=(len(grid), len(mesh.coarse_grid)),
    ).tocsr()
    return SparseOperator(
        _restrict(full, mesh.fine_free, mesh.coarse_free),
        DofSpace.FINE_INTERIOR,
        DofSpace.COARSE_INTERIOR,
    )


def energy(A: Operator, b: np.ndarray, v: np.ndarray) -> Tuple[float, float]:
    """Return (J(v), J0(v)) with J0(v) = 1/2 v^T A v and J(v) = J0(v) - b^T v."""
    j0 = 0.5 * float(v @ (as_matrix(A) @ v))
    return j0 - float(b @ v), j0


def energy_norm(A: Operator, v: np.ndarray) -> float:
    """|||v||| = sqrt(a(v, v))."""
    return math.sqrt(max(float(v @ (as_matrix(A) @ v)), 0.0))


def l2_norm(M: Operator, v: np.ndarray) -> float:
    return math.sqrt(max(float(v @ (as_matrix(M) @ v)), 0.0))


def element_energies(
    mesh: TwoLevelMesh, coeff: CoefficientField, v: np.ndarray
) -> np.ndarray:
    """Per-fine-element contributions a_K |grad v|^2 |K|; they sum to v^T A v."""
    full = np.zeros(len(mesh.fine_grid))
    full[mesh.fine_free] = v
    grads, measures = element_geometry(mesh.fine_coords, mesh.fine_elements)
    gradient = np.einsum("eid,ei->ed", grads, full[mesh.fine_elements])
    return coeff.values * measures * np.einsum("ed,ed->e", gradient, gradient)


def interpolate(mesh: TwoLevelMesh, g: Forcing) -> np.ndarray:
    """Fine nodal interpolant of g on the interior dofs."""
    return np.asarray(g(mesh.fine_coords[mesh.fine_free]), dtype=float)
