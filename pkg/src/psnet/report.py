"""Metric report writers: text table, JSON key-value file and optional workbook."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import jinja2
import openpyxl
from openpyxl.styles import Font

from .exceptions import PSNetError
from .metrics import MetricReport, Scores

logger = logging.getLogger(__name__)

REPORT_TEMPLATE = "report.txt.j2"


def _filter_metric(value: float | int, decimals: int = 4, width: int = 8) -> str:
    if not isinstance(value, (int, float)):
        return str(value)
    if math.isnan(value):
        return f"{'n/a':>{width}}"
    return f"{value:>{width}.{decimals}f}"


def create_report_env(
    cls: type[jinja2.Environment] = jinja2.Environment, **kwargs
) -> jinja2.Environment:
    """Create a Jinja2 Environment for rendering metric reports."""
    kwargs.setdefault("loader", jinja2.PackageLoader("psnet", "templates"))
    env = cls(
        autoescape=False,
        keep_trailing_newline=True,
        undefined=jinja2.StrictUndefined,
        **kwargs,
    )
    env.filters["metric"] = _filter_metric
    return env


def render_report(report: MetricReport, env: jinja2.Environment | None = None) -> str:
    env = env or create_report_env()
    try:
        template = env.get_template(REPORT_TEMPLATE)
        return template.render(
            source=report.source,
            per_sequence=report.per_sequence,
            aggregate=report.aggregate,
        )
    except jinja2.TemplateError as e:
        raise PSNetError(f"Failed to render metric report: {e}") from e


def json_path_for(path: Path) -> Path:
    return path.with_suffix(".json")


def write_workbook(report: MetricReport, path: str | Path) -> None:
    """Per-sequence sheet with an aggregate row, plus the averaged F-curve."""
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "sequences"
    header = ("sequence", "frames", "excluded", "max_f", "s_measure", "mae")
    ws.append(header)
    for cell in ws[1]:
        cell.font = Font(bold=True)

    def row(name: str, s: Scores) -> tuple:
        max_f = None if math.isnan(s.max_f) else s.max_f
        return (name, s.frames, s.excluded, max_f, s.s_measure, s.mae)

    for name, scores in report.per_sequence.items():
        ws.append(row(name, scores))
    ws.append(row("ALL", report.aggregate))
    for cell in ws[ws.max_row]:
        cell.font = Font(bold=True)

    curve = wb.create_sheet("f_curve")
    curve.append(("threshold", "precision", "recall", "f"))
    fc = report.f_curve
    for k in range(len(fc.f)):
        curve.append((k, float(fc.precision[k]), float(fc.recall[k]), float(fc.f[k])))
    wb.save(str(path))


def write_report(report: MetricReport, path: str | Path, workbook: bool = False) -> list[Path]:
    """Write the text table at ``path`` and the JSON file next to it.

    Returns the written paths. With ``workbook`` an ``.xlsx`` copy is added.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(report), encoding="utf-8")
    data_path = json_path_for(path)
    if data_path == path:
        data_path = path.with_name(path.name + ".json")
    data_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    written = [path, data_path]
    if workbook:
        xlsx = path.with_suffix(".xlsx")
        write_workbook(report, xlsx)
        written.append(xlsx)
    logger.info("Wrote report to %s", ", ".join(str(p) for p in written))
    return written


def read_report(path: str | Path) -> MetricReport:
    """Parse a JSON report written by ``write_report``."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return MetricReport.from_dict(raw)
    except (OSError, ValueError, KeyError) as e:
        raise PSNetError(f"Cannot read metric report {path}: {e}") from e
