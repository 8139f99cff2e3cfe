"""CSV / JSON writers with fixed headers and shortest round-trip floats."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class OutputError(OSError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: list[str], columns) -> Path:
    """Write equal-length ``columns`` under ``header`` (one row per index)."""
    path = Path(path)
    cols = [np.asarray(c).ravel() if not isinstance(c, list) else c for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    lines = [",".join(header)]
    lines.extend(",".join(fmt(c[i]) for c in cols) for i in range(n))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    return o


def write_json(path, data) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(data), indent=2, allow_nan=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def write_dfield(path, field) -> Path:
    X, Y = field.mesh.grid()
    return write_csv(path, ["x_nm", "y_nm", "D_nm2_per_s"], [X, Y, field.values])


def write_decay(path, curve) -> Path:
    return write_csv(path, ["t_s", "hz_norm"], [curve.t, curve.h])


def write_snapshot(path, snap) -> Path:
    X, Y = snap.mesh.grid()
    return write_csv(path, ["x_nm", "y_nm", "Iz"], [X, Y, snap.values])


def snapshot_name(label: str, t: float, single: bool = True) -> str:
    stem = "snapshot" if single else f"snapshot_{label}"
    return f"{stem}_t{fmt(float(t))}.csv"
