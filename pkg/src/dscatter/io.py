"""Field snapshots and tabular outputs.

A snapshot is a raw little-endian complex64 file (``<stem>.bin``) plus a
JSON sidecar (``<stem>.json``) with ``dim, n, L, N, view, time`` and any
extra metadata attached to the field.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .spectral import Grid, SpectralField

SNAPSHOT_DTYPE = "<c8"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def save_snapshot(field: SpectralField, path, time: float | None = None) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    field.data.astype(SNAPSHOT_DTYPE).tofile(bin_path)
    sidecar = {
        **field.grid.to_dict(),
        "N": field.components,
        "view": field.view,
        "time": time if time is not None else field.meta.get("time"),
        "dtype": SNAPSHOT_DTYPE,
        "meta": _jsonable({k: v for k, v in field.meta.items() if k != "time"}),
    }
    json_path.write_text(json.dumps(_jsonable(sidecar), indent=2, sort_keys=True))
    return bin_path, json_path


def load_snapshot(path) -> SpectralField:
    stem = Path(path).with_suffix("")
    sidecar = json.loads(stem.with_suffix(".json").read_text())
    grid = Grid(sidecar["dim"], sidecar["n"], sidecar["L"])
    raw = np.fromfile(stem.with_suffix(".bin"), dtype=sidecar.get("dtype", SNAPSHOT_DTYPE))
    expected = sidecar["N"] * grid.n**grid.dim
    if raw.size != expected:
        raise ConfigurationError(f"snapshot holds {raw.size} values, sidecar implies {expected}")
    data = raw.reshape((sidecar["N"],) + grid.shape).astype(np.complex128)
    meta = dict(sidecar.get("meta", {}))
    if sidecar.get("time") is not None:
        meta["time"] = sidecar["time"]
    return SpectralField(grid, data, sidecar["view"], meta)


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    return path


def format_cell(value) -> str:
    """Fixed formatting so CSV output is byte-stable across runs."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else str(value)


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(c)) for c in columns])
    return path


def append_csv_row(path, row: dict) -> Path:
    path = Path(path)
    exists = path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not exists:
            writer.writerow(list(row))
        writer.writerow([format_cell(v) for v in row.values()])
    return path
