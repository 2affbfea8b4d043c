"""Nested two-level P1 meshes of the unit interval/square and nodal patches.

Node coordinates are stored as integers in units of the respective mesh size,
so nesting and patch membership are decided in exact arithmetic. Nodes are
numbered lexicographically with the x index running fastest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np

from hmm_lod.core.errors import MeshError

logger = logging.getLogger(__name__)

SUPPORTED_DIMENSIONS = (1, 2)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _grid_nodes(dimension: int, cells: int) -> np.ndarray:
    """Integer node coordinates of a uniform grid with `cells` cells per axis."""
    ticks = np.arange(cells + 1)
    if dimension == 1:
        return ticks[:, None]
    jj, ii = np.meshgrid(ticks, ticks, indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()])


def _grid_elements(dimension: int, cells: int) -> np.ndarray:
    """Element connectivity; squares are split along the (0,0)-(1,1) diagonal."""
    if dimension == 1:
        left = np.arange(cells)
        return np.column_stack([left, left + 1])

    jj, ii = np.meshgrid(np.arange(cells), np.arange(cells), indexing="ij")
    v00 = (ii + jj * (cells + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + cells + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    # ↳ lower/upper triangles of each cell are stored next to each other
    return np.stack([lower, upper], axis=1).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class TwoLevelMesh:
    """Coarse mesh with size h = 1/n and its uniform refinement h_f = h * 2**-r."""

    dimension: int
    n: int
    r: int
    coarse_grid: np.ndarray
    coarse_interior: np.ndarray
    coarse_elements: np.ndarray
    fine_grid: np.ndarray
    fine_interior: np.ndarray
    fine_elements: np.ndarray
    fine_parent: np.ndarray
    node_elements: Tuple[np.ndarray, ...]

    @property
    def ratio(self) -> int:
        """Fine elements per coarse element along one axis (2**r)."""
        return 2**self.r

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def h_fine(self) -> float:
        return 1.0 / (self.n * self.ratio)

    @property
    def fine_cells(self) -> int:
        return self.n * self.ratio

    @cached_property
    def coarse_coords(self) -> np.ndarray:
        return _frozen(self.coarse_grid / self.n)

    @cached_property
    def fine_coords(self) -> np.ndarray:
        return _frozen(self.fine_grid / self.fine_cells)

    @cached_property
    def coarse_free(self) -> np.ndarray:
        """Global indices of interior coarse nodes, in node order."""
        return _frozen(np.flatnonzero(self.coarse_interior))

    @cached_property
    def fine_free(self) -> np.ndarray:
        """Global indices of interior fine nodes, in node order."""
        return _frozen(np.flatnonzero(self.fine_interior))

    @cached_property
    def coarse_free_index(self) -> np.ndarray:
        """Map global coarse node -> interior dof position (-1 on the boundary)."""
        index = np.full(len(self.coarse_grid), -1, dtype=np.int64)
        index[self.coarse_free] = np.arange(len(self.coarse_free))
        return _frozen(index)

    @cached_property
    def fine_free_index(self) -> np.ndarray:
        """Map global fine node -> interior dof position (-1 on the boundary)."""
        index = np.full(len(self.fine_grid), -1, dtype=np.int64)
        index[self.fine_free] = np.arange(len(self.fine_free))
        return _frozen(index)

    @cached_property
    def coarse_to_fine(self) -> np.ndarray:
        """Fine node index coinciding with each coarse node."""
        return _frozen(_linear_index(self.coarse_grid * self.ratio, self.fine_cells))

    @cached_property
    def fine_children(self) -> Tuple[np.ndarray, ...]:
        """Fine elements contained in each coarse element."""
        order = np.argsort(self.fine_parent, kind="stable")
        bounds = np.searchsorted(
            self.fine_parent[order], np.arange(len(self.coarse_elements) + 1)
        )
        return tuple(
            _frozen(order[bounds[e] : bounds[e + 1]])
            for e in range(len(self.coarse_elements))
        )

    @property
    def num_coarse_free(self) -> int:
        return len(self.coarse_free)

    @property
    def num_fine_free(self) -> int:
        return len(self.fine_free)

    def coarse_node_at(self, *grid_index: int) -> int:
        """Global coarse node index from integer grid coordinates."""
        if len(grid_index) != self.dimension:
            raise MeshError(
                f"expected {self.dimension} grid indices, got {len(grid_index)}"
            )
        if any(not 0 <= g <= self.n for g in grid_index):
            raise MeshError(f"grid index {grid_index} outside 0..{self.n}")
        return int(_linear_index(np.array([grid_index]), self.n)[0])


def _linear_index(grid: np.ndarray, cells: int) -> np.ndarray:
    if grid.shape[1] == 1:
        return grid[:, 0].astype(np.int64)
    return (grid[:, 0] + grid[:, 1] * (cells + 1)).astype(np.int64)


def _locate_parents(
    dimension: int, n: int, ratio: int, fine_grid: np.ndarray, fine_elements: np.ndarray
) -> np.ndarray:
    # vertex sums are (d+1) * barycenter in fine units, exact in integers
    sums = fine_grid[fine_elements].sum(axis=1)
    scale = (dimension + 1) * ratio
    cell = sums // scale
    if dimension == 1:
        return cell[:, 0]
    local = sums - scale * cell
    upper = (local[:, 1] > local[:, 0]).astype(np.int64)
    return 2 * (cell[:, 0] + cell[:, 1] * n) + upper


def build_two_level(dimension: int, n: int, r: int) -> TwoLevelMesh:
    """
    Build the nested coarse/fine triangulation of (0,1)^d.

    Args:
        dimension: 1 or 2
        n: coarse subdivisions per axis (h = 1/n), at least 2
        r: refinement exponent (h_f = h * 2**-r), at least 1

    Raises:
        MeshError: if any argument violates its precondition
    """
    if dimension not in SUPPORTED_DIMENSIONS:
        raise MeshError(f"dimension must be 1 or 2, got {dimension}")
    if int(n) != n or n < 2:
        raise MeshError(f"n must be an integer >= 2 (no interior coarse node), got {n}")
    if int(r) != r or r < 1:
        raise MeshError(f"refinement exponent r must be a positive integer, got {r}")

    ratio = 2**r
    fine_cells = n * ratio

    coarse_grid = _grid_nodes(dimension, n)
    fine_grid = _grid_nodes(dimension, fine_cells)
    coarse_elements = _grid_elements(dimension, n)
    fine_elements = _grid_elements(dimension, fine_cells)
    fine_parent = _locate_parents(dimension, n, ratio, fine_grid, fine_elements)

    node_elements = tuple(
        _frozen(np.flatnonzero((coarse_elements == node).any(axis=1)))
        for node in range(len(coarse_grid))
    )

    mesh = TwoLevelMesh(
        dimension=dimension,
        n=n,
        r=r,
        coarse_grid=_frozen(coarse_grid),
        coarse_interior=_frozen(((coarse_grid > 0) & (coarse_grid < n)).all(axis=1)),
        coarse_elements=_frozen(coarse_elements),
        fine_grid=_frozen(fine_grid),
        fine_interior=_frozen(
            ((fine_grid > 0) & (fine_grid < fine_cells)).all(axis=1)
        ),
        fine_elements=_frozen(fine_elements),
        fine_parent=_frozen(fine_parent),
        node_elements=node_elements,
    )
    logger.debug(
        f"Built {dimension}D two-level mesh n={n} r={r}: "
        f"{len(coarse_elements)} coarse / {len(fine_elements)} fine elements"
    )
    return mesh


@dataclass(frozen=True, eq=False)
class Patch:
    """Nodal patch omega_{z,k} and the fine/coarse index sets derived from it."""

    center: int
    level: int
    coarse_elements: np.ndarray
    fine_elements: np.ndarray
    interior_fine_nodes: np.ndarray
    constraint_nodes: np.ndarray
    saturated: bool

    def fine_dofs(self, mesh: TwoLevelMesh) -> np.ndarray:
        """Positions of the patch-interior fine nodes among the fine free dofs."""
        return mesh.fine_free_index[self.interior_fine_nodes]

    def constraint_rows(self, mesh: TwoLevelMesh) -> np.ndarray:
        """Positions of the constraint nodes among the coarse free dofs."""
        return mesh.coarse_free_index[self.constraint_nodes]


def _grow(mesh: TwoLevelMesh, elements: np.ndarray) -> np.ndarray:
    vertices = np.unique(mesh.coarse_elements[elements])
    return np.flatnonzero(np.isin(mesh.coarse_elements, vertices).any(axis=1))


def require_interior_node(mesh: TwoLevelMesh, z: int) -> None:
    if not 0 <= z < len(mesh.coarse_grid):
        raise MeshError(f"coarse node {z} does not exist")
    if not mesh.coarse_interior[z]:
        raise MeshError(f"coarse node {z} lies on the boundary; no corrector is built")


def nodal_patch(mesh: TwoLevelMesh, z: int, k: int) -> Patch:
    """
    Build omega_{z,k}: level 1 is the support of the hat at z, level k adds every
    coarse element touching the closure of level k-1.

    Raises:
        MeshError: for boundary or unknown nodes and for k < 1
    """
    require_interior_node(mesh, z)
    if int(k) != k or k < 1:
        raise MeshError(f"patch level must be an integer >= 1, got {k}")

    elements = mesh.node_elements[z]
    saturated = len(elements) == len(mesh.coarse_elements)
    for _ in range(k - 1):
        if saturated:
            break
        elements = _grow(mesh, elements)
        saturated = len(elements) == len(mesh.coarse_elements)

    fine_mask = np.isin(mesh.fine_parent, elements)
    inside = np.unique(mesh.fine_elements[fine_mask])
    outside = np.unique(mesh.fine_elements[~fine_mask])
    interior = np.setdiff1d(inside, outside, assume_unique=True)
    interior = interior[mesh.fine_interior[interior]]

    touched = np.unique(mesh.coarse_elements[elements])
    constraint_nodes = touched[mesh.coarse_interior[touched]]

    return Patch(
        center=z,
        level=k,
        coarse_elements=_frozen(elements),
        fine_elements=_frozen(np.flatnonzero(fine_mask)),
        interior_fine_nodes=_frozen(interior),
        constraint_nodes=_frozen(constraint_nodes),
        saturated=saturated,
    )


def saturation_level(mesh: TwoLevelMesh, z: int) -> int:
    """Smallest k for which omega_{z,k} covers the whole domain."""
    require_interior_node(mesh, z)
    elements = mesh.node_elements[z]
    level = 1
    while len(elements) < len(mesh.coarse_elements):
        elements = _grow(mesh, elements)
        level += 1
    return level


def patch_layers(mesh: TwoLevelMesh, z: int) -> np.ndarray:
    """Level at which each coarse element first joins omega_{z,k}."""
    require_interior_node(mesh, z)
    layers = np.zeros(len(mesh.coarse_elements), dtype=np.int64)
    elements = mesh.node_elements[z]
    layers[elements] = 1
    level = 1
    while len(elements) < len(mesh.coarse_elements):
        elements = _grow(mesh, elements)
        level += 1
        layers[elements[layers[elements] == 0]] = level
    return layers
