"""CSV / JSON export and re-import of trial reports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from pathlib import Path

from .runner import TrialReport, TrialRow

CSV_HEADER = ["trial", "success", "rounds", "packets_sent", "recovered"]


class IoError(OSError):
    pass


def report_to_json(report: TrialReport) -> str:
    doc = {"scenario": report.scenario, "rows": [asdict(r) for r in report.rows],
           "aggregates": report.aggregates}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_to_csv(report: TrialReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in report.rows:
        writer.writerow([r.trial, "true" if r.success else "false", r.rounds,
                         r.packets_sent, r.recovered])
    return out.getvalue()


def export_report(report: TrialReport, fmt: str, path) -> Path:
    fmt = fmt.lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = report_to_csv(report) if fmt == "csv" else report_to_json(report)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def _rows_from_csv(text: str) -> list[TrialRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    return [TrialRow(int(t), s == "true", int(r), int(p), rec) for t, s, r, p, rec in reader]


def import_report(path, fmt: str | None = None) -> TrialReport:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if fmt == "csv":
        return TrialReport({}, _rows_from_csv(text))
    doc = json.loads(text)
    return TrialReport(doc["scenario"], [TrialRow(**r) for r in doc["rows"]])
