"""CSV and JSON serialization of study reports."""

import csv
import io
import logging
from pathlib import Path
from typing import Any, Optional

from hmm_lod.config import OutputFormat
from hmm_lod.models import CSV_COLUMNS, ExperimentReport, ReportRow

logger = logging.getLogger(__name__)

GLOBAL_K = "global"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if hasattr(value, "value"):  # Enum
        return str(value.value)
    if isinstance(value, float):
        # repr round-trips, so identical floats give identical bytes
        return repr(value)
    return str(value)


def row_cells(row: ReportRow) -> list[str]:
    cells = []
    for column in CSV_COLUMNS:
        value = getattr(row, column)
        if column == "k" and value is None:
            cells.append(GLOBAL_K)
        else:
            cells.append(_cell(value))
    return cells


def render_csv(report: ExperimentReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow(row_cells(row))
    return buffer.getvalue()


def render_json(report: ExperimentReport) -> str:
    return report.model_dump_json(indent=2) + "\n"


def render(report: ExperimentReport, output_format: OutputFormat | str) -> str:
    if OutputFormat(output_format) == OutputFormat.JSON:
        return render_json(report)
    return render_csv(report)


def write_report(
    report: ExperimentReport,
    path: Optional[Path],
    output_format: OutputFormat | str = OutputFormat.CSV,
) -> str:
    """
    Serialize a report and write it to `path` (when given).

    Returns:
        The serialized text, so callers can echo it when no path is set
    """
    text = render(report, output_format)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {len(report.rows)} rows to {path}")
    return text
