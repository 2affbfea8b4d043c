"""
Fine-scale correctors of the coarse hats, the remainder R_f(f) and the
multiscale basis span{lambda_z + phi_{z,k}}.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from hmm_lod.config import Settings, settings
from hmm_lod.core.coefficient import CoefficientField
from hmm_lod.core.decomposition import ProjectionKit, SaddleSystem
from hmm_lod.core.fem import Operator, as_matrix, element_energies, energy_norm
from hmm_lod.core.mesh import (
    TwoLevelMesh,
    nodal_patch,
    patch_layers,
    require_interior_node,
)

logger = logging.getLogger(__name__)

# Level value of a corrector solved on the whole domain
GLOBAL = None


@dataclass(frozen=True, eq=False)
class Corrector:
    """phi_{z,k} in V_f, supported on the interior dofs of omega_{z,k}."""

    node: int
    level: Optional[int]
    values: np.ndarray
    dofs: np.ndarray
    energy_norm: float
    stationarity: float
    feasibility: float
    tail_norms: Tuple[Tuple[int, float], ...] = ()

    @property
    def is_global(self) -> bool:
        return self.level is GLOBAL


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    """Fine x coarse matrix whose column for node z is P lambda_z + phi_{z,k}."""

    matrix: sp.csr_matrix
    nodes: np.ndarray
    levels: Tuple[Optional[int], ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape


class _GlobalSystem:
    """Lazily factored whole-domain saddle system shared by worker threads."""

    def __init__(
        self,
        kit: ProjectionKit,
        A: Operator,
        settings_obj: Settings,
        system: Optional[SaddleSystem] = None,
    ):
        self._kit = kit
        self._A = A
        self._settings = settings_obj
        self._system = system
        self._lock = threading.Lock()

    def get(self) -> SaddleSystem:
        with self._lock:
            if self._system is None:
                self._system = SaddleSystem(
                    self._A, self._kit.C, settings_obj=self._settings
                )
            return self._system


def global_system(
    kit: ProjectionKit, A: Operator, settings_obj: Optional[Settings] = None
) -> SaddleSystem:
    """Saddle system on all interior fine dofs with every coarse constraint row."""
    return SaddleSystem(A, kit.C, settings_obj=settings_obj or settings)


def _hat_load(mesh: TwoLevelMesh, kit: ProjectionKit, A: Operator, z: int) -> np.ndarray:
    column = mesh.coarse_free_index[z]
    hat = kit.P.matrix[:, [column]].toarray().ravel()
    return -(as_matrix(A) @ hat)


def compute_corrector(
    mesh: TwoLevelMesh,
    kit: ProjectionKit,
    A: Operator,
    z: int,
    k: Optional[int] = GLOBAL,
    system: Optional[SaddleSystem] = None,
    settings_obj: Optional[Settings] = None,
) -> Corrector:
    """
    Solve a(phi, w) = -a(lambda_z, w) for all w in V_f (restricted to H^1_0 of
    omega_{z,k} when k is given).

    Args:
        z: global index of an interior coarse node
        k: patch level, or GLOBAL for the unlocalized corrector
        system: optional pre-factored whole-domain system, used for global and
            saturated patches

    Raises:
        MeshError: for boundary nodes
        ConstraintRankError, KKTResidualError, SolverError: from the saddle solve
    """
    if settings_obj is None:
        settings_obj = settings
    require_interior_node(mesh, z)
    A_matrix = as_matrix(A)
    load = _hat_load(mesh, kit, A_matrix, z)

    patch = None if k is GLOBAL else nodal_patch(mesh, z, k)
    if patch is None or patch.saturated:
        dofs = np.arange(kit.num_fine)
        if system is None:
            system = global_system(kit, A_matrix, settings_obj)
    else:
        dofs = patch.fine_dofs(mesh)
        rows = patch.constraint_rows(mesh)
        system = SaddleSystem(
            A_matrix[dofs][:, dofs],
            kit.C.matrix[rows][:, dofs],
            settings_obj=settings_obj,
        )

    solution = system.solve(load[dofs])
    values = np.zeros(kit.num_fine)
    values[dofs] = solution.v
    return Corrector(
        node=z,
        level=k,
        values=values,
        dofs=dofs,
        energy_norm=energy_norm(A_matrix, values),
        stationarity=solution.stationarity,
        feasibility=solution.feasibility,
    )


def compute_correctors(
    mesh: TwoLevelMesh,
    kit: ProjectionKit,
    A: Operator,
    k: Optional[int] = GLOBAL,
    nodes: Optional[Sequence[int]] = None,
    workers: int = 1,
    system: Optional[SaddleSystem] = None,
    settings_obj: Optional[Settings] = None,
) -> List[Corrector]:
    """
    Correctors for `nodes` (default: every interior coarse node), in node order.

    Independent problems run on a thread pool; results keep the input order.
    Global and saturated problems share one whole-domain factorization, `system`
    if given.
    """
    if settings_obj is None:
        settings_obj = settings
    if nodes is None:
        nodes = mesh.coarse_free.tolist()
    shared = _GlobalSystem(kit, as_matrix(A), settings_obj, system)

    def _one(z: int) -> Corrector:
        needs_global = k is GLOBAL or nodal_patch(mesh, z, k).saturated
        return compute_corrector(
            mesh,
            kit,
            A,
            z,
            k,
            system=shared.get() if needs_global else None,
            settings_obj=settings_obj,
        )

    logger.info(
        f"Computing {len(nodes)} correctors "
        f"(k={'global' if k is GLOBAL else k}, workers={workers})"
    )
    if workers <= 1:
        return [_one(z) for z in nodes]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_one, nodes))


def compute_remainder(
    kit: ProjectionKit,
    A: Operator,
    b: np.ndarray,
    system: Optional[SaddleSystem] = None,
    settings_obj: Optional[Settings] = None,
) -> np.ndarray:
    """R_f(f) = argmin over V_f of J, i.e. a(R_f, v) = (f, v) for all v in V_f."""
    if system is None:
        system = global_system(kit, A, settings_obj)
    return system.solve(np.asarray(b, dtype=float)).v


def build_basis(correctors: Sequence[Corrector], kit: ProjectionKit, mesh: TwoLevelMesh) -> MultiscaleBasis:
    """
    Assemble B = P + Phi with one column per interior coarse node.

    Raises:
        ValueError: unless every interior coarse node has exactly one corrector
    """
    by_node = {c.node: c for c in correctors}
    expected = mesh.coarse_free.tolist()
    if len(by_node) != len(correctors) or sorted(by_node) != expected:
        raise ValueError(
            "a multiscale basis needs exactly one corrector per interior coarse node"
        )

    ordered = [by_node[z] for z in expected]
    rows = np.concatenate([c.dofs for c in ordered])
    cols = np.concatenate(
        [np.full(len(c.dofs), column) for column, c in enumerate(ordered)]
    )
    data = np.concatenate([c.values[c.dofs] for c in ordered])
    phi = sp.coo_matrix((data, (rows, cols)), shape=kit.P.shape).tocsr()
    return MultiscaleBasis(
        matrix=(kit.P.matrix + phi).tocsr(),
        nodes=np.asarray(expected),
        levels=tuple(c.level for c in ordered),
    )


def plain_basis(kit: ProjectionKit, mesh: TwoLevelMesh) -> MultiscaleBasis:
    """Uncorrected coarse hats; Galerkin on it is the plain coarse P1 method."""
    return MultiscaleBasis(
        matrix=kit.P.matrix.copy(),
        nodes=mesh.coarse_free.copy(),
        levels=(0,) * mesh.num_coarse_free,
    )


def decay_profile(
    corrector: Corrector, mesh: TwoLevelMesh, coeff: CoefficientField
) -> List[Tuple[int, float]]:
    """
    Tail norms |||phi_z|||_{Omega minus omega_{z,l}} for l = 1..saturation.

    Tails are accumulated layer by layer from the outside in, so they are
    non-increasing in l and exactly zero at saturation.

    Raises:
        ValueError: if the corrector was computed on a patch
    """
    if not corrector.is_global:
        raise ValueError("decay profiles are defined for global correctors only")
    layers = patch_layers(mesh, corrector.node)
    saturation = int(layers.max())
    energies = element_energies(mesh, coeff, corrector.values)
    per_layer = np.bincount(
        layers[mesh.fine_parent], weights=energies, minlength=saturation + 1
    )
    # outside[l] = sum of layers > l
    outside = np.zeros(saturation + 1)
    for level in range(saturation - 1, -1, -1):
        outside[level] = outside[level + 1] + max(per_layer[level + 1], 0.0)
    return [(level, math.sqrt(outside[level])) for level in range(1, saturation + 1)]


def with_decay_profile(
    corrector: Corrector, mesh: TwoLevelMesh, coeff: CoefficientField
) -> Corrector:
    """Copy of a global corrector carrying its tail norms."""
    return replace(corrector, tail_norms=tuple(decay_profile(corrector, mesh, coeff)))
