"""Problem setup and row plumbing shared by the study runners."""

from __future__ import annotations

import asyncio
import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
import scipy

from hmm_lod import __version__
from hmm_lod.config import Settings
from hmm_lod.core.coefficient import (
    CoefficientField,
    CoefficientKind,
    make_coefficient,
)
from hmm_lod.core.decomposition import ProjectionKit, build_projection_kit
from hmm_lod.core.errors import LodError
from hmm_lod.core.fem import (
    Forcing,
    SparseOperator,
    assemble_load,
    assemble_stiffness,
)
from hmm_lod.core.mesh import TwoLevelMesh, build_two_level, saturation_level
from hmm_lod.models import (
    ExperimentConfig,
    ForcingKind,
    ForcingSpec,
    KPolicy,
    KPolicyKind,
    ReportRow,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a row needs: mesh, coefficient, fine operators and load."""

    mesh: TwoLevelMesh
    coeff: CoefficientField
    A: SparseOperator
    b: np.ndarray
    kit: ProjectionKit
    epsilon: Optional[float]


def forcing_function(spec: ForcingSpec) -> Forcing:
    """f = value (constant) or f = value * prod_i sin(pi x_i) (sine)."""
    value = spec.value
    if spec.kind == ForcingKind.CONSTANT:
        return lambda x: np.full(len(x), value)
    return lambda x: value * np.prod(np.sin(np.pi * x), axis=1)


def build_problem(
    config: ExperimentConfig,
    n: int,
    settings_obj: Settings,
    epsilon: Optional[float] = None,
) -> Problem:
    """Mesh, coefficient, stiffness, load and P0 operators for one row."""
    mesh = build_two_level(config.dimension, n, config.refinement(settings_obj))
    coeff = make_coefficient(
        mesh,
        config.coefficient.kind,
        config.coefficient.params(epsilon),
        seed=config.coefficient.seed,
    )
    return Problem(
        mesh=mesh,
        coeff=coeff,
        A=assemble_stiffness(mesh, coeff),
        b=assemble_load(mesh, forcing_function(config.forcing)),
        kit=build_projection_kit(mesh),
        epsilon=epsilon,
    )


def max_saturation(mesh: TwoLevelMesh) -> int:
    """Smallest k at which every interior node's patch covers the domain."""
    return max(saturation_level(mesh, int(z)) for z in mesh.coarse_free)


def resolve_k(policy: KPolicy, mesh: TwoLevelMesh) -> Optional[int]:
    """Patch level for `mesh`; None selects global correctors."""
    if policy.kind == KPolicyKind.GLOBAL:
        return None
    if policy.kind == KPolicyKind.FIXED:
        return policy.k
    if policy.kind == KPolicyKind.SATURATED:
        return max_saturation(mesh)
    return max(1, math.ceil(math.log2(mesh.n)) + policy.offset)


def sample_nodes(mesh: TwoLevelMesh, count: int) -> List[int]:
    """Up to `count` interior coarse nodes spread evenly over the node order."""
    free = mesh.coarse_free
    if count >= len(free):
        return [int(z) for z in free]
    if count == 1:
        picks = np.array([len(free) // 2])
    else:
        picks = np.unique(np.round(np.linspace(0, len(free) - 1, count)).astype(int))
    return [int(free[i]) for i in picks]


def base_row(
    config: ExperimentConfig, problem: Problem, k: Optional[int], **values: Any
) -> ReportRow:
    """Row prefilled with the metadata needed to re-run it."""
    coeff = problem.coeff
    return ReportRow(
        study=config.study,
        d=problem.mesh.dimension,
        n=problem.mesh.n,
        r=problem.mesh.r,
        k=k,
        coeff=coeff.tag,
        eps=problem.epsilon,
        contrast=coeff.contrast if coeff.kind == CoefficientKind.CHECKERBOARD else None,
        seed=coeff.seed,
        **values,
    )


def failed_row(
    config: ExperimentConfig,
    n: int,
    settings_obj: Settings,
    k: Optional[int],
    epsilon: Optional[float],
    error: Exception,
) -> ReportRow:
    """Row for a problem that aborted before (or while) solving."""
    spec = config.coefficient
    return ReportRow(
        study=config.study,
        d=config.dimension,
        n=n,
        r=config.refinement(settings_obj),
        k=k,
        coeff=spec.kind.value,
        eps=epsilon,
        contrast=spec.contrast,
        seed=spec.seed if spec.kind == CoefficientKind.CHECKERBOARD else None,
        error=f"{type(error).__name__}: {error}",
    )


def wall_ms(start: float, settings_obj: Settings) -> float:
    """Elapsed milliseconds, or 0 when wall-time recording is off."""
    if not settings_obj.record_wall_time:
        return 0.0
    return round((time.perf_counter() - start) * 1000.0, 3)


async def run_rows(
    jobs: Sequence[Callable[[], T]], threads: int
) -> List[T]:
    """
    Run blocking row jobs on worker threads, at most `threads` at a time.

    Results are returned in job order regardless of completion order.
    """
    semaphore = asyncio.Semaphore(max(1, threads))

    async def _guarded(job: Callable[[], T]) -> T:
        async with semaphore:
            return await asyncio.to_thread(job)

    tasks: List[Awaitable[T]] = [_guarded(job) for job in jobs]
    return list(await asyncio.gather(*tasks))


def guarded(
    job: Callable[[], List[ReportRow]],
    on_error: Callable[[LodError], ReportRow],
) -> Callable[[], List[ReportRow]]:
    """Wrap a row job so a core error becomes a failed row instead of aborting."""

    def _run() -> List[ReportRow]:
        try:
            return job()
        except LodError as e:
            logger.error(f"Row aborted: {e}")
            return [on_error(e)]

    return _run


def report_metadata(
    config: ExperimentConfig, settings_obj: Settings, **extra: Any
) -> Dict[str, Any]:
    """Seed, versions and the resolved configuration of a run."""
    metadata: Dict[str, Any] = {
        "seed": config.coefficient.seed,
        "versions": {
            "hmm_lod": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "config": config.model_dump(mode="json", exclude={"out"}),
        "tolerances": {
            "kkt": settings_obj.kkt_tolerance,
            "solve": settings_obj.solve_tolerance,
            "identity": settings_obj.identity_tolerance,
        },
    }
    metadata.update(extra)
    return metadata


def collect_failures(rows: Sequence[ReportRow]) -> List[str]:
    return [
        f"{row.study.value} n={row.n} k={row.k} eps={row.eps}: {row.error}"
        for row in rows
        if row.error is not None
    ]
