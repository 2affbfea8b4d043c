import asyncio
import logging
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, Optional

import typer
from typing_extensions import Annotated

from hmm_lod.config import LogLevel, OutputFormat, settings
from hmm_lod.export.archive import write_decay_profiles
from hmm_lod.export.report import write_report
from hmm_lod.jobs.convergence import run_convergence
from hmm_lod.jobs.decay import run_decay
from hmm_lod.jobs.identities import run_identities
from hmm_lod.jobs.localization import run_localization
from hmm_lod.jobs.parser import ConfigError, load_config
from hmm_lod.models import ExperimentConfig, ExperimentReport, StudyKind

app = typer.Typer(help="Two-level multiscale FEM studies: convergence, localization, decay, identities.")

logger = logging.getLogger(__name__)

Runner = Callable[[ExperimentConfig], Awaitable[ExperimentReport]]

ConfigOption = Annotated[
    Optional[Path],
    typer.Option("--config", help="JSON experiment config (ExperimentConfig fields)."),
]
OutOption = Annotated[
    Optional[Path],
    typer.Option("--out", help="Report path; the report is printed when omitted."),
]
SeedOption = Annotated[
    Optional[int],
    typer.Option("--seed", help="Seed of the checkerboard coefficient draw."),
]
ThreadsOption = Annotated[
    Optional[int],
    typer.Option("--threads", help="Worker threads for rows and corrector solves."),
]
FormatOption = Annotated[
    Optional[OutputFormat],
    typer.Option("--format", help="Report format.", case_sensitive=False),
]


@app.callback()
def main(
    log_level: Annotated[
        LogLevel,
        typer.Option("--log-level", help="Logging level.", case_sensitive=False),
    ] = settings.log_level,
) -> None:
    logging.basicConfig(
        level=getattr(logging, LogLevel(log_level).value),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def _execute(
    study: StudyKind,
    runner: Runner,
    config_path: Optional[Path],
    out: Optional[Path],
    seed: Optional[int],
    threads: Optional[int],
    output_format: Optional[OutputFormat],
) -> ExperimentReport:
    overrides: Dict[str, Any] = {"out": out, "threads": threads}
    if seed is not None:
        overrides["coefficient"] = {"seed": seed}
    try:
        config = load_config(config_path, study, overrides)
    except ConfigError as e:
        print(f"Error: {e}")
        raise typer.Exit(code=1)

    try:
        report = asyncio.run(runner(config))
    except Exception as e:
        # ↳ Exit code 1 stays reserved for configuration errors
        logger.exception(f"{study.value} study aborted")
        typer.echo(f"FAILED: {study.value} study aborted: {type(e).__name__}: {e}", err=True)
        raise typer.Exit(code=2)
    text = write_report(report, config.out, output_format or settings.output_format)
    if config.out is None:
        print(text, end="")
    else:
        print(f"Report written to {config.out}")
    return report


def _finish(report: ExperimentReport) -> None:
    if report.failures:
        for failure in report.failures:
            typer.echo(f"FAILED: {failure}", err=True)
        raise typer.Exit(code=2)


@app.command()
def convergence(
    config: ConfigOption = None,
    out: OutOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    output_format: FormatOption = None,
) -> None:
    """
    h-convergence of the multiscale error against the fine reference solution.
    """
    report = _execute(
        StudyKind.CONVERGENCE, run_convergence, config, out, seed, threads, output_format
    )
    _finish(report)


@app.command()
def localization(
    config: ConfigOption = None,
    out: OutOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    output_format: FormatOption = None,
) -> None:
    """
    Multiscale error of patch-localized correctors for k = 1..saturation.
    """
    report = _execute(
        StudyKind.LOCALIZATION, run_localization, config, out, seed, threads, output_format
    )
    _finish(report)


@app.command()
def decay(
    config: ConfigOption = None,
    out: OutOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    output_format: FormatOption = None,
    profiles: Annotated[
        Optional[Path],
        typer.Option("--profiles", help="Also write (node, layer, tail) profiles as CSV."),
    ] = None,
) -> None:
    """
    Layer-wise tail norms of global correctors and the fitted decay constant.
    """
    report = _execute(
        StudyKind.DECAY, run_decay, config, out, seed, threads, output_format
    )
    if profiles is not None:
        write_decay_profiles(report.profiles, profiles)
    _finish(report)


@app.command()
def identities(
    config: ConfigOption = None,
    out: OutOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    output_format: FormatOption = None,
) -> None:
    """
    Residuals of the discrete decomposition identities.
    """
    report = _execute(
        StudyKind.IDENTITIES, run_identities, config, out, seed, threads, output_format
    )
    _finish(report)


if __name__ == "__main__":
    app()
