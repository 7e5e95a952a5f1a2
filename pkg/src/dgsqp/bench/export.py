"""CSV/JSON persistence of study results.

Record files carry one row per `StudyRecord` with the columns of
``RECORD_FIELDS``. Grid files are long format, one row per cell with columns
``eps0, eta, success_rate, n``. MSE files list ``ic_index, mse, agreement``.
JSON files additionally carry the study summary.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

from .studies import RECORD_FIELDS, GridCell, GridStudy, MseReport, Study, StudyRecord

FORMATS = ("csv", "json")
GRID_FIELDS = ("eps0", "eta", "success_rate", "n")
MSE_FIELDS = ("ic_index", "mse", "agreement")

_INT_FIELDS = {"ic_index", "seed", "horizon", "iterations"}
_FLOAT_FIELDS = {"eps0", "eta", "wall_time", "stationarity", "feasibility", "complementarity"}


class ExportError(OSError):
    """Results could not be written or read back."""


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)  # "nan" / "inf"; json would otherwise emit invalid tokens
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _open_check(path: Path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise ExportError(f"directory {path.parent} does not exist")
    return path


def export_records(records, path, fmt: str = "csv", summary: dict | None = None, meta: dict | None = None) -> Path:
    path = _open_check(path)
    try:
        if fmt == "csv":
            _write_csv(path, RECORD_FIELDS, ([getattr(r, f) for f in RECORD_FIELDS] for r in records))
        elif fmt == "json":
            doc = dict(meta or {})
            doc["summary"] = summary or {}
            doc["records"] = [asdict(r) for r in records]
            path.write_text(json.dumps(_json_safe(doc), indent=1, sort_keys=True) + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def export_grid(cells, path, fmt: str = "csv") -> Path:
    path = _open_check(path)
    try:
        if fmt == "csv":
            _write_csv(path, GRID_FIELDS, ([c.eps0, c.eta, c.success_rate, c.n] for c in cells))
        elif fmt == "json":
            path.write_text(json.dumps(_json_safe([asdict(c) for c in cells]), indent=1) + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def export_mse(report: MseReport, path, fmt: str = "csv") -> Path:
    path = _open_check(path)
    rows = list(zip(report.ic_indices, report.mse, report.agreement))
    try:
        if fmt == "csv":
            _write_csv(path, MSE_FIELDS, rows)
        elif fmt == "json":
            doc = {
                "scenario": report.scenario,
                "summary": report.summary(),
                "per_ic": [dict(zip(MSE_FIELDS, r)) for r in rows],
                "records": [asdict(r) for r in report.records],
            }
            path.write_text(json.dumps(_json_safe(doc), indent=1, sort_keys=True) + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def export(results, path, fmt: str = "csv") -> Path:
    """Write a `Study`, `GridStudy`, `MseReport` or list of records."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(results, GridStudy):
        if fmt == "csv":
            return export_grid(results.cells, path, fmt)
        meta = {"kind": results.kind, "scenario": results.scenario, "seed": results.seed,
                "cells": [asdict(c) for c in results.cells]}
        return export_records(results.records, path, fmt, results.summary, meta)
    if isinstance(results, Study):
        meta = {"kind": results.kind, "scenario": results.scenario, "seed": results.seed}
        return export_records(results.records, path, fmt, results.summary, meta)
    if isinstance(results, MseReport):
        return export_mse(results, path, fmt)
    return export_records(list(results), path, fmt)


def _coerce(row: dict) -> StudyRecord:
    values = {}
    for key in RECORD_FIELDS:
        v = row[key]
        if key in _INT_FIELDS:
            v = int(v)
        elif key in _FLOAT_FIELDS:
            v = float(v)
        values[key] = v
    return StudyRecord(**values)


def load_records(path) -> list[StudyRecord]:
    """Read records back from a CSV or JSON record file."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            rows = doc["records"] if isinstance(doc, dict) else doc
        else:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise ExportError(f"cannot read records from {path}: {exc}") from exc
    return [_coerce(r) for r in rows]


def load_grid(path) -> list[GridCell]:
    with open(path, newline="") as fh:
        return [
            GridCell(float(r["eps0"]), float(r["eta"]), float(r["success_rate"]), int(r["n"]))
            for r in csv.DictReader(fh)
        ]
