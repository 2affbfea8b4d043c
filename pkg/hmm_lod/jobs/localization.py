"""Localization study: error of patch-restricted correctors as k grows."""

import asyncio
import logging
import time
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional

import numpy as np

from hmm_lod.config import Settings, settings
from hmm_lod.core.correctors import (
    Corrector,
    build_basis,
    compute_correctors,
    compute_remainder,
    global_system,
)
from hmm_lod.core.decomposition import SaddleSystem
from hmm_lod.core.errors import LodError
from hmm_lod.core.fem import energy_norm
from hmm_lod.core.solver import (
    ErrorReport,
    error_report,
    solve_multiscale,
    solve_reference,
)
from hmm_lod.jobs.common import (
    Problem,
    base_row,
    build_problem,
    collect_failures,
    failed_row,
    guarded,
    max_saturation,
    report_metadata,
    resolve_k,
    run_rows,
    sample_nodes,
    wall_ms,
)
from hmm_lod.models import ExperimentConfig, ExperimentReport, ReportRow

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class _Baseline:
    problem: Problem
    system: SaddleSystem
    reference: np.ndarray
    correctors: Dict[int, Corrector]
    errors: ErrorReport
    remainder_norm: float
    saturation: int
    nodes: List[int]


def _baseline(config: ExperimentConfig, n: int, run_settings: Settings) -> _Baseline:
    problem = build_problem(config, n, run_settings, config.epsilons()[0])
    mesh, kit, A, b = problem.mesh, problem.kit, problem.A, problem.b
    system = global_system(kit, A, run_settings)
    correctors = compute_correctors(
        mesh,
        kit,
        A,
        workers=run_settings.threads,
        system=system,
        settings_obj=run_settings,
    )
    reference = solve_reference(A, b, run_settings).fine
    multiscale = solve_multiscale(build_basis(correctors, kit, mesh), A, b)
    return _Baseline(
        problem=problem,
        system=system,
        reference=reference,
        correctors={c.node: c for c in correctors},
        errors=error_report(reference, multiscale.fine, A, kit.M_f),
        remainder_norm=energy_norm(A, compute_remainder(kit, A, b, system=system)),
        saturation=max_saturation(mesh),
        nodes=sample_nodes(mesh, config.sample_nodes),
    )


def _localized_row(
    config: ExperimentConfig, baseline: _Baseline, k: int, run_settings: Settings
) -> List[ReportRow]:
    start = time.perf_counter()
    problem = baseline.problem
    mesh, kit, A, b = problem.mesh, problem.kit, problem.A, problem.b
    correctors = compute_correctors(
        mesh,
        kit,
        A,
        k=k,
        workers=run_settings.threads,
        system=baseline.system,
        settings_obj=run_settings,
    )
    multiscale = solve_multiscale(build_basis(correctors, kit, mesh), A, b)
    errors = error_report(baseline.reference, multiscale.fine, A, kit.M_f)

    by_node = {c.node: c for c in correctors}
    differences = {
        z: energy_norm(A, by_node[z].values - baseline.correctors[z].values)
        for z in baseline.nodes
    }
    extras = {f"corrector_diff_{z}": value for z, value in differences.items()}
    extras["corrector_diff_max"] = max(differences.values())
    extras["rel_energy_err"] = errors.rel_energy
    return [
        base_row(
            config,
            problem,
            k,
            energy_err=errors.energy,
            l2_err=errors.l2,
            remainder_norm=baseline.remainder_norm,
            wall_ms=wall_ms(start, run_settings),
            extras=extras,
        )
    ]


def _check_sweep(
    config: ExperimentConfig,
    baseline: _Baseline,
    rows: List[ReportRow],
    run_settings: Settings,
) -> List[str]:
    failures: List[str] = []
    n = baseline.problem.mesh.n
    global_err = baseline.errors.energy
    by_k = {row.k: row for row in rows if row.ok and row.k is not None}

    saturated = by_k.get(baseline.saturation)
    if saturated is not None:
        gap = abs(saturated.energy_err - global_err)
        if gap > run_settings.kkt_tolerance * max(1.0, global_err):
            failures.append(
                f"n={n}: saturated k={baseline.saturation} differs from the global "
                f"error by {gap:.3e}"
            )

    k_check = resolve_k(config.k_policy, baseline.problem.mesh)
    if config.expect_ratio is not None and k_check in by_k and global_err > 0:
        ratio = by_k[k_check].energy_err / global_err
        if ratio > config.expect_ratio:
            failures.append(
                f"n={n}: k={k_check} error is {ratio:.3f}x the global error "
                f"(limit {config.expect_ratio}x)"
            )
    return failures


async def _sweep(
    config: ExperimentConfig, n: int, run_settings: Settings
) -> tuple[List[ReportRow], List[str]]:
    epsilon = config.epsilons()[0]
    try:
        baseline = await asyncio.to_thread(_baseline, config, n, run_settings)
    except LodError as e:
        logger.error(f"Localization baseline n={n} aborted: {e}")
        return [failed_row(config, n, run_settings, None, epsilon, e)], []

    global_row = base_row(
        config,
        baseline.problem,
        None,
        energy_err=baseline.errors.energy,
        l2_err=baseline.errors.l2,
        remainder_norm=baseline.remainder_norm,
        extras={"rel_energy_err": baseline.errors.rel_energy},
    )
    logger.info(f"Localization n={n}: sweeping k=1..{baseline.saturation}")
    jobs = [
        guarded(
            partial(_localized_row, config, baseline, k, run_settings),
            partial(failed_row, config, n, run_settings, k, epsilon),
        )
        for k in range(1, baseline.saturation + 1)
    ]
    rows = [row for chunk in await run_rows(jobs, run_settings.threads) for row in chunk]
    return [global_row, *rows], _check_sweep(config, baseline, rows, run_settings)


async def run_localization(
    config: ExperimentConfig, settings_obj: Optional[Settings] = None
) -> ExperimentReport:
    """
    For each n: global baseline, then one row per k = 1..saturation with the
    multiscale error and |||phi_{z,k} - phi_z||| on the sampled nodes.
    """
    run_settings = config.effective_settings(settings_obj or settings)
    rows: List[ReportRow] = []
    checks: List[str] = []
    for n in config.n_values:
        sweep_rows, sweep_failures = await _sweep(config, n, run_settings)
        rows.extend(sweep_rows)
        checks.extend(sweep_failures)

    failures = collect_failures(rows) + checks
    logger.info(
        f"Localization study finished: {len(rows)} rows, {len(failures)} failures"
    )
    return ExperimentReport(
        study=config.study,
        rows=rows,
        metadata=report_metadata(config, run_settings),
        failures=failures,
    )
