"""Run products: validated numeric tables plus CSV and JSON emission.

Numbers are written with 17 significant digits so every float64 round-trips
exactly; files use UNIX newlines and are written atomically (temp file then
rename), so an aborted run never leaves a partial table behind.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["RunReport", "format_float", "write_csv", "write_summary"]


def format_float(x: float) -> str:
    """Shortest exact decimal at 17 significant digits."""
    return f"{float(x):.17g}"


@dataclass
class RunReport:
    """A finished run: per-time rows, their column names, and a summary.

    rows has shape (n_times, n_columns) and must be entirely finite; the
    summary is a JSON-serializable dict whose "checks" entry maps check
    names to booleans and decides the process exit status.
    """

    kind: str
    columns: list[str]
    rows: np.ndarray
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError(f"rows must be 2-D, got shape {rows.shape}")
        if rows.shape[1] != len(self.columns):
            raise ValueError(
                f"{len(self.columns)} column names for {rows.shape[1]} columns"
            )
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if rows.size and not np.all(np.isfinite(rows)):
            bad = np.argwhere(~np.isfinite(rows))[0]
            raise ValueError(
                f"non-finite value in column '{self.columns[bad[1]]}' at row {bad[0]}"
            )
        self.rows = rows

    @property
    def passed(self) -> bool:
        checks = self.summary.get("checks", {})
        return all(bool(v) for v in checks.values())


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def write_csv(report: RunReport, path) -> Path:
    """Emit the per-time table; header row always present, even when empty."""
    path = Path(path)
    lines = [",".join(report.columns)]
    for row in report.rows:
        lines.append(",".join(format_float(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        # bool before int: Python bool subclasses int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj

def write_summary(report: RunReport, path) -> Path:
    """Emit the summary block as stable, sorted JSON."""
    path = Path(path)
    body = json.dumps(_jsonable(report.summary), indent=2, sort_keys=True)
    _atomic_write(path, (body + "\n").encode("ascii"))
    return path
