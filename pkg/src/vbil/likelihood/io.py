"""CSV readers and writers for the three data layouts.

Lines starting with ``#`` are comments; writers can emit one as a header.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .panel import GlmmData


def _read_rows(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ContractError(f"{path}: no header row")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    rows = [[float(v) for v in r] for r in reader]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, data


def _write_rows(path, header, rows, comment: str | None = None, fmt: str = "%.17g"):
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(fmt % v if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")
    Path(path).write_text(buf.getvalue())


def _require(header, expected, path):
    if header[: len(expected)] != expected:
        raise ContractError(f"{path}: expected columns starting with {expected}, got {header}")


def read_panel_csv(path, response: str = "bernoulli") -> GlmmData:
    header, data = _read_rows(path)
    _require(header, ["panel_id", "y"], path)
    xcols = header[2:]
    if not xcols or xcols != [f"x{k + 1}" for k in range(len(xcols))]:
        raise ContractError(f"{path}: covariate columns must be x1..xp")
    ids, first = np.unique(data[:, 0], return_index=True)
    panels = []
    for pid in ids[np.argsort(first)]:
        rows = data[data[:, 0] == pid]
        panels.append((rows[:, 1], rows[:, 2:]))
    return GlmmData.from_panels(panels, response)


def write_panel_csv(path, data: GlmmData, comment: str | None = None):
    header = ["panel_id", "y"] + [f"x{k + 1}" for k in range(data.n_covariates)]
    rows = []
    for i in range(data.n_panels):
        for j in np.flatnonzero(data.mask[i]):
            rows.append([i + 1, float(data.y[i, j]), *map(float, data.X[i, j])])
    _write_rows(path, header, rows, comment)


def read_series_csv(path) -> np.ndarray:
    header, data = _read_rows(path)
    _require(header, ["t", "y"], path)
    return data[np.argsort(data[:, 0], kind="stable"), 1]


def write_series_csv(path, y, comment: str | None = None):
    rows = [[t + 1, float(v)] for t, v in enumerate(np.asarray(y, dtype=float))]
    _write_rows(path, ["t", "y"], rows, comment)


def read_abc_csv(path) -> np.ndarray:
    header, data = _read_rows(path)
    _require(header, ["y"], path)
    return data[:, 0].copy()


def write_abc_csv(path, y, comment: str | None = None):
    _write_rows(path, ["y"], [[float(v)] for v in np.asarray(y, dtype=float)], comment)


def write_table(path, header, rows, comment: str | None = None):
    """Generic CSV table writer used for traces, chains and summaries."""
    _write_rows(path, header, rows, comment)


def read_table(path) -> tuple[list[str], np.ndarray]:
    return _read_rows(path)
