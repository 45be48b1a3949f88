"""CSV, JSON and binary snapshot I/O."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..grid import Grid, State

# header: magic, n (uint64), length (float64), time (float64); then 2n float64 (eta, v)
SNAPSHOT_MAGIC = b"GPCSNAP1"
_HEADER = struct.Struct("<8sQdd")


def fmt(x) -> str:
    """17 significant digits, '.' decimal; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(list(header))
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path: Path):
    """Return (header, float array); non-numeric cells become NaN."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]

    def num(s):
        try:
            return float(s)
        except ValueError:
            return {"true": 1.0, "false": 0.0}.get(s, math.nan)

    data = np.array([[num(s) for s in r] for r in body], dtype=float).reshape(len(body), len(header))
    return header, data


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        x = float(o)
        return x if math.isfinite(x) else str(x)
    return o


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_snapshot(path: Path, s: State, g: Grid, t: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SNAPSHOT_MAGIC, g.n, g.length, float(t)))
        f.write(np.ascontiguousarray(s.eta, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(s.v, dtype="<f8").tobytes())
    return path


def read_snapshot(path: Path):
    """Return (state, grid, time)."""
    raw = Path(path).read_bytes()
    magic, n, length, t = _HEADER.unpack_from(raw, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * n:
        raise ValueError(f"{path}: expected {2 * n} samples, found {body.size}")
    return State(body[:n].copy(), body[n:].copy()), Grid(int(n), length), float(t)
