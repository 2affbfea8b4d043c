"""h-convergence study: multiscale vs reference error across coarse mesh sizes."""

import logging
import time
from collections import defaultdict
from functools import partial
from typing import Dict, List, Optional

from hmm_lod.config import Settings, settings
from hmm_lod.core.correctors import (
    build_basis,
    compute_correctors,
    compute_remainder,
    global_system,
    plain_basis,
)
from hmm_lod.core.fem import energy_norm
from hmm_lod.core.fitting import fit_rate
from hmm_lod.core.solver import error_report, solve_multiscale, solve_reference
from hmm_lod.jobs.common import (
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


def _convergence_row(
    config: ExperimentConfig, n: int, epsilon: Optional[float], run_settings: Settings
) -> List[ReportRow]:
    start = time.perf_counter()
    problem = build_problem(config, n, run_settings, epsilon)
    mesh, kit, A, b = problem.mesh, problem.kit, problem.A, problem.b
    k = resolve_k(config.k_policy, mesh)
    logger.info(f"Convergence row n={n} eps={epsilon} k={k}")

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
    errors = error_report(reference.fine, multiscale.fine, A, kit.M_f)
    remainder = compute_remainder(kit, A, b, system=system)

    # plain coarse P1 Galerkin on the same fine quadrature
    coarse = solve_multiscale(plain_basis(kit, mesh), A, b)
    coarse_errors = error_report(reference.fine, coarse.fine, A, kit.M_f)

    return [
        base_row(
            config,
            problem,
            k,
            energy_err=errors.energy,
            l2_err=errors.l2,
            remainder_norm=energy_norm(A, remainder),
            wall_ms=wall_ms(start, run_settings),
            extras={
                "rel_energy_err": errors.rel_energy,
                "rel_l2_err": errors.rel_l2,
                "p1_energy_err": coarse_errors.energy,
                "p1_l2_err": coarse_errors.l2,
            },
        )
    ]


def _epsilon_ratios(
    rows: List[ReportRow], column: str
) -> Dict[int, float]:
    """max/min of an error column over the epsilon sweep at each n."""
    by_n: Dict[int, List[float]] = defaultdict(list)
    for row in rows:
        value = row.energy_err if column == "energy_err" else row.extras.get(column)
        if value is not None:
            by_n[row.n].append(value)
    return {
        n: max(values) / min(values)
        for n, values in sorted(by_n.items())
        if len(values) >= 2 and min(values) > 0
    }


async def run_convergence(
    config: ExperimentConfig, settings_obj: Optional[Settings] = None
) -> ExperimentReport:
    """
    For each n (and each epsilon of the sweep): correctors per the k policy,
    reference and multiscale solves, errors. Rates are fitted per epsilon.

    Core errors abort only the affected row; they are listed in `failures`.
    """
    run_settings = config.effective_settings(settings_obj or settings)
    epsilons = config.epsilons()
    keys = [(n, epsilon) for epsilon in epsilons for n in config.n_values]

    jobs = [
        guarded(
            partial(_convergence_row, config, n, epsilon, run_settings),
            partial(failed_row, config, n, run_settings, None, epsilon),
        )
        for n, epsilon in keys
    ]
    rows = [row for chunk in await run_rows(jobs, run_settings.threads) for row in chunk]
    failures = collect_failures(rows)
    metadata = report_metadata(config, run_settings)

    rates: Dict[str, float] = {}
    remainder_rates: Dict[str, float] = {}
    for epsilon in epsilons:
        group = [i for i, row in enumerate(rows) if row.eps == epsilon and row.ok]
        label = "none" if epsilon is None else repr(epsilon)
        if len(group) < 3:
            if config.expect_rate is not None:
                failures.append(
                    f"eps={epsilon}: {len(group)} successful rows, a rate needs 3"
                )
            continue
        h = [1.0 / rows[i].n for i in group]
        try:
            rate = fit_rate(h, [rows[i].energy_err for i in group])
        except ValueError as e:
            failures.append(f"eps={epsilon}: no energy-error rate ({e})")
            continue
        rates[label] = rate
        remainders = [rows[i].remainder_norm for i in group]
        if all(value > 0 for value in remainders):
            remainder_rates[label] = fit_rate(h, remainders)
        for i in group:
            rows[i] = rows[i].model_copy(update={"rate": rate})
        if config.expect_rate is not None and rate < config.expect_rate:
            failures.append(
                f"eps={epsilon}: energy-error rate {rate:.3f} below {config.expect_rate}"
            )
    metadata["rates"] = rates
    metadata["remainder_rates"] = remainder_rates

    if len(epsilons) >= 2:
        ratios = _epsilon_ratios([row for row in rows if row.ok], "energy_err")
        metadata["eps_ratios"] = {str(n): r for n, r in ratios.items()}
        metadata["p1_eps_ratios"] = {
            str(n): r
            for n, r in _epsilon_ratios(
                [row for row in rows if row.ok], "p1_energy_err"
            ).items()
        }
        if config.expect_ratio is not None:
            for n, ratio in ratios.items():
                if ratio > config.expect_ratio:
                    failures.append(
                        f"n={n}: energy errors vary by {ratio:.3f}x over epsilon "
                        f"(limit {config.expect_ratio}x)"
                    )

    logger.info(f"Convergence study finished: {len(rows)} rows, {len(failures)} failures")
    return ExperimentReport(
        study=config.study, rows=rows, metadata=metadata, failures=failures
    )
