"""Decay study: layer-wise tail norms of global correctors."""

import logging
import time
from functools import partial
from typing import List, Optional, Tuple

from hmm_lod.config import Settings, settings
from hmm_lod.core.correctors import compute_correctors, decay_profile
from hmm_lod.core.errors import LodError
from hmm_lod.core.fitting import fit_decay
from hmm_lod.jobs.common import (
    base_row,
    build_problem,
    collect_failures,
    failed_row,
    report_metadata,
    run_rows,
    sample_nodes,
    wall_ms,
)
from hmm_lod.models import DecayProfile, ExperimentConfig, ExperimentReport, ReportRow

logger = logging.getLogger(__name__)

_Result = Tuple[List[ReportRow], List[DecayProfile]]


def _profile_failures(profile: DecayProfile) -> List[str]:
    where = f"n={profile.n} node={profile.node}"
    failures = []
    tails = profile.tails
    if any(later > earlier for earlier, later in zip(tails, tails[1:])):
        failures.append(f"{where}: tail norms increase with the layer")
    if tails and tails[-1] != 0.0:
        failures.append(f"{where}: tail at saturation is {tails[-1]:.3e}, not 0")
    return failures


def _decay_rows(
    config: ExperimentConfig, n: int, run_settings: Settings
) -> _Result:
    start = time.perf_counter()
    problem = build_problem(config, n, run_settings, config.epsilons()[0])
    mesh = problem.mesh
    nodes = sample_nodes(mesh, config.sample_nodes)
    logger.info(f"Decay rows n={n}: {len(nodes)} sampled nodes")
    correctors = compute_correctors(
        mesh,
        problem.kit,
        problem.A,
        nodes=nodes,
        workers=run_settings.threads,
        settings_obj=run_settings,
    )

    rows, profiles = [], []
    for corrector in correctors:
        layers, tails = zip(*decay_profile(corrector, mesh, problem.coeff))
        profile = DecayProfile(
            n=n,
            node=corrector.node,
            coords=[float(x) for x in mesh.coarse_coords[corrector.node]],
            layers=list(layers),
            tails=list(tails),
        )
        profiles.append(profile)
        rows.append(
            base_row(
                config,
                problem,
                None,
                decay_c=fit_decay(layers, tails),
                node=corrector.node,
                wall_ms=wall_ms(start, run_settings),
                extras={
                    "energy_norm": corrector.energy_norm,
                    "saturation": float(layers[-1]),
                    "first_tail": tails[0],
                },
            )
        )
    return rows, profiles


def _guarded_decay(
    config: ExperimentConfig, n: int, run_settings: Settings
) -> _Result:
    try:
        return _decay_rows(config, n, run_settings)
    except LodError as e:
        logger.error(f"Decay rows n={n} aborted: {e}")
        return [failed_row(config, n, run_settings, None, config.epsilons()[0], e)], []


async def run_decay(
    config: ExperimentConfig, settings_obj: Optional[Settings] = None
) -> ExperimentReport:
    """
    Global correctors for the sampled nodes of each n, their tail profiles and
    the fitted per-layer decay constant c (tail ~ exp(-c * layer)).
    """
    run_settings = config.effective_settings(settings_obj or settings)
    jobs = [partial(_guarded_decay, config, n, run_settings) for n in config.n_values]
    results = await run_rows(jobs, run_settings.threads)

    rows = [row for chunk, _ in results for row in chunk]
    profiles = [profile for _, chunk in results for profile in chunk]
    failures = collect_failures(rows)
    for profile in profiles:
        failures.extend(_profile_failures(profile))
    if config.expect_decay is not None:
        for row in rows:
            if row.ok and row.decay_c < config.expect_decay:
                failures.append(
                    f"n={row.n} node={row.node}: fitted decay {row.decay_c:.3f} "
                    f"below {config.expect_decay}"
                )

    fitted = [row.decay_c for row in rows if row.ok]
    metadata = report_metadata(
        config,
        run_settings,
        decay_min=min(fitted) if fitted else None,
    )
    logger.info(f"Decay study finished: {len(rows)} rows, {len(failures)} failures")
    return ExperimentReport(
        study=config.study,
        rows=rows,
        metadata=metadata,
        failures=failures,
        profiles=profiles,
    )
