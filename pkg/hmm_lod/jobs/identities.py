"""
Identity study: discrete residuals of the splitting identities.

For global correctors the multiscale error equals the remainder R_f(f), the
coarse coefficients equal P0 u_ref, and the basis is a-orthogonal to V_f.
With localized correctors only corrector feasibility is asserted; the other
residuals are recorded.
"""

import logging
import math
import time
from functools import partial
from typing import Dict, List, Optional

import numpy as np

from hmm_lod.config import Settings, settings
from hmm_lod.core.coefficient import make_coefficient
from hmm_lod.core.correctors import (
    Corrector,
    MultiscaleBasis,
    build_basis,
    compute_correctors,
    compute_remainder,
    global_system,
)
from hmm_lod.core.decomposition import ProjectionKit, apply_P0, reconstruct
from hmm_lod.core.fem import (
    Operator,
    as_matrix,
    assemble_stiffness,
    energy,
    energy_norm,
    interpolate,
    l2_norm,
)
from hmm_lod.core.fitting import fit_rate
from hmm_lod.core.solver import relative, solve_multiscale, solve_reference
from hmm_lod.jobs.common import (
    Problem,
    base_row,
    build_problem,
    collect_failures,
    failed_row,
    guarded,
    report_metadata,
    resolve_k,
    run_rows,
    wall_ms,
)
from hmm_lod.models import ExperimentConfig, ExperimentReport, ReportRow

logger = logging.getLogger(__name__)

# Residuals asserted against identity_tolerance for global correctors
GLOBAL_IDENTITIES = (
    "orthogonality",
    "remainder_identity",
    "projection_identity",
    "reconstruction_identity",
    "energy_split",
)


def random_fine_space_vectors(
    kit: ProjectionKit, count: int, seed: int, settings_obj: Settings
) -> List[np.ndarray]:
    """`count` random vectors of V_f = ker C, w = v - P P0 v for Gaussian v."""
    rng = np.random.default_rng(seed)
    vectors = []
    for _ in range(count):
        v = rng.standard_normal(kit.num_fine)
        vectors.append(v - kit.P.matrix @ apply_P0(kit, v, settings_obj))
    return vectors


def orthogonality_residual(
    basis: MultiscaleBasis, A: Operator, samples: List[np.ndarray]
) -> float:
    """max over columns b_j and samples w of |a(b_j, w)| / (|||b_j||| |||w|||)."""
    A = as_matrix(A)
    B = basis.matrix
    column_norms = np.sqrt(np.maximum((B.multiply(A @ B)).sum(axis=0).A1, 0.0))
    worst = 0.0
    for w in samples:
        w_norm = energy_norm(A, w)
        if w_norm == 0.0:
            continue
        coupling = np.abs(B.T @ (A @ w)) / (column_norms * w_norm)
        worst = max(worst, float(coupling.max()))
    return worst


def max_feasibility(correctors: List[Corrector]) -> float:
    """max over correctors of ||C phi|| / (1 + |||phi|||)."""
    return max(c.feasibility / (1.0 + c.energy_norm) for c in correctors)


def projection_ratio(problem: Problem, settings_obj: Settings) -> float:
    """||v - P P0 v||_L2 / |v|_H1 for the fine interpolant of prod_i sin(pi x_i)."""
    mesh, kit = problem.mesh, problem.kit
    v = interpolate(mesh, lambda x: np.prod(np.sin(np.pi * x), axis=1))
    laplacian = assemble_stiffness(mesh, make_coefficient(mesh, "constant"))
    detail = v - kit.P.matrix @ apply_P0(kit, v, settings_obj)
    return l2_norm(kit.M_f, detail) / energy_norm(laplacian, v)


def _identity_row(
    config: ExperimentConfig, n: int, run_settings: Settings
) -> List[ReportRow]:
    start = time.perf_counter()
    problem = build_problem(config, n, run_settings, config.epsilons()[0])
    mesh, kit, A, b = problem.mesh, problem.kit, problem.A, problem.b
    k = resolve_k(config.k_policy, mesh)
    logger.info(f"Identity row n={n} k={'global' if k is None else k}")

    system = global_system(kit, A, run_settings)
    correctors = compute_correctors(
        mesh,
        kit,
        A,
        k=k,
        workers=run_settings.threads,
        system=system,
        settings_obj=run_settings,
    )
    basis = build_basis(correctors, kit, mesh)
    reference = solve_reference(A, b, run_settings)
    multiscale = solve_multiscale(basis, A, b)
    remainder = compute_remainder(kit, A, b, system=system)

    u_ref, u_ms, c = reference.fine, multiscale.fine, multiscale.coarse
    ref_norm = energy_norm(A, u_ref)
    p0_ref = apply_P0(kit, u_ref, run_settings)

    # R(c) = R_h(c) + R_f(f), and J splits the same way
    lifted = reconstruct(kit, A, c, b=b, system=system)
    lifted_h = reconstruct(kit, A, c, system=system)
    j_full = energy(A, b, lifted)[0]
    j_split = energy(A, b, lifted_h)[0] + energy(A, b, remainder)[0]

    samples = random_fine_space_vectors(
        kit, config.orthogonality_samples, config.coefficient.seed, run_settings
    )
    extras: Dict[str, float] = {
        "feasibility": max_feasibility(correctors),
        "orthogonality": orthogonality_residual(basis, A, samples),
        "remainder_identity": relative(
            energy_norm(A, u_ref - u_ms - remainder), ref_norm
        ),
        "projection_identity": float(np.max(np.abs(p0_ref - c)))
        / max(1.0, float(np.max(np.abs(c)))),
        "reconstruction_identity": relative(energy_norm(A, lifted - u_ref), ref_norm),
        "energy_split": abs(j_full - j_split) / max(1.0, abs(j_full)),
        "projection_ratio": projection_ratio(problem, run_settings),
        "multiscale_residual": multiscale.residual,
    }
    errors_energy = energy_norm(A, u_ref - u_ms)
    return [
        base_row(
            config,
            problem,
            k,
            energy_err=errors_energy,
            l2_err=l2_norm(kit.M_f, u_ref - u_ms),
            remainder_norm=energy_norm(A, remainder),
            wall_ms=wall_ms(start, run_settings),
            extras=extras,
        )
    ]


def _row_failures(row: ReportRow, run_settings: Settings) -> List[str]:
    where = f"n={row.n} k={row.k}"
    failures = []
    if row.extras["feasibility"] > run_settings.kkt_tolerance:
        failures.append(
            f"{where}: corrector feasibility {row.extras['feasibility']:.3e} "
            f"above {run_settings.kkt_tolerance}"
        )
    if row.k is None:
        for name in GLOBAL_IDENTITIES:
            value = row.extras[name]
            if not (math.isfinite(value) and value <= run_settings.identity_tolerance):
                failures.append(
                    f"{where}: {name} residual {value:.3e} above "
                    f"{run_settings.identity_tolerance}"
                )
    return failures


async def run_identities(
    config: ExperimentConfig, settings_obj: Optional[Settings] = None
) -> ExperimentReport:
    """
    Residuals of the decomposition identities at each n, plus the observed rate
    of ||v - P P0 v||_L2 / |v|_H1 when three or more sizes are swept.
    """
    run_settings = config.effective_settings(settings_obj or settings)
    epsilon = config.epsilons()[0]
    jobs = [
        guarded(
            partial(_identity_row, config, n, run_settings),
            partial(failed_row, config, n, run_settings, None, epsilon),
        )
        for n in config.n_values
    ]
    rows = [row for chunk in await run_rows(jobs, run_settings.threads) for row in chunk]
    failures = collect_failures(rows)
    for row in rows:
        if row.ok:
            failures.extend(_row_failures(row, run_settings))

    metadata = report_metadata(config, run_settings)
    good = [i for i, row in enumerate(rows) if row.ok]
    if len(good) >= 3:
        rate = fit_rate(
            [1.0 / rows[i].n for i in good],
            [rows[i].extras["projection_ratio"] for i in good],
        )
        metadata["projection_rate"] = rate
        for i in good:
            rows[i] = rows[i].model_copy(update={"rate": rate})
        if config.expect_rate is not None and rate < config.expect_rate:
            failures.append(
                f"projection error rate {rate:.3f} below {config.expect_rate}"
            )
    elif config.expect_rate is not None:
        failures.append(f"{len(good)} successful rows, a rate needs 3")

    logger.info(f"Identity study finished: {len(rows)} rows, {len(failures)} failures")
    return ExperimentReport(
        study=config.study, rows=rows, metadata=metadata, failures=failures
    )
