"""Readers and writers for fields, arcs, trajectories, masks and reports."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .grid import STATUS_NAMES, Grid, ValueField

EXGF_MAGIC = b"EXGF"
EXGF_VERSION = 1
_STATUS_CODES = {v: k for k, v in STATUS_NAMES.items()}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Plain CSV with a header row; floats are written with full precision.  Returns the row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    return n


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty CSV")
    return rows[0], rows[1:]


# -- fields ------------------------------------------------------------------------
def field_header(d: int) -> list[str]:
    return [f"x{i + 1}" for i in range(d)] + ["value", "status"]


def write_field_csv(path, fld: ValueField) -> int:
    X = fld.grid.nodes().reshape(-1, fld.grid.d)
    V = fld.values.reshape(-1)
    S = fld.status.reshape(-1)
    rows = ([*x, v, STATUS_NAMES[int(s)]] for x, v, s in zip(X, V, S))
    return write_csv(path, field_header(fld.grid.d), rows)


def read_field_csv(path, box=None) -> tuple[Grid, np.ndarray, np.ndarray]:
    """Rebuild grid, values and status from a field CSV in row-major node order."""
    header, rows = read_csv(path)
    d = len(header) - 2
    data = np.array([[float(r[i]) for i in range(d + 1)] for r in rows])
    status = np.array([_STATUS_CODES[r[d + 1]] for r in rows], dtype=np.int8)
    axes = [np.unique(data[:, i]) for i in range(d)]
    n = tuple(len(a) for a in axes)
    if int(np.prod(n)) != len(rows):
        raise ValidationError(f"{path}: {len(rows)} rows do not form a {n} grid")
    if box is None:
        box = [[a[0], a[-1]] for a in axes]
    grid = Grid(np.asarray(box, dtype=float), n)
    return grid, data[:, d].reshape(n), status.reshape(n)


def write_field_binary(path, fld: ValueField) -> None:
    """EXGF: magic, version u8, d u8, node counts u32, box f64 pairs, values f64, status u8 (little endian)."""
    g = fld.grid
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(EXGF_MAGIC)
        fh.write(struct.pack("<BB", EXGF_VERSION, g.d))
        fh.write(struct.pack(f"<{g.d}I", *g.n))
        fh.write(np.ascontiguousarray(g.box, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(fld.status, dtype="u1").tobytes())


def read_field_binary(path) -> tuple[Grid, np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != EXGF_MAGIC:
        raise ValidationError(f"{path}: not an EXGF file")
    version, d = struct.unpack_from("<BB", raw, 4)
    if version != EXGF_VERSION:
        raise ValidationError(f"{path}: unsupported EXGF version {version}")
    off = 6
    n = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    box = np.frombuffer(raw, "<f8", 2 * d, off).reshape(d, 2).copy()
    off += 16 * d
    size = int(np.prod(n))
    if len(raw) != off + 9 * size:
        raise ValidationError(f"{path}: truncated or oversized EXGF payload")
    values = np.frombuffer(raw, "<f8", size, off).reshape(n).copy()
    off += 8 * size
    status = np.frombuffer(raw, "u1", size, off).reshape(n).astype(np.int8)
    return Grid(box, tuple(n)), values, status


# -- arcs and trajectories --------------------------------------------------------------
def arc_header(d: int) -> list[str]:
    return ["t", *(f"y{i + 1}" for i in range(d)), *(f"p{i + 1}" for i in range(d)),
            "u_index", "H_residual", "degenerate"]


def write_arc_csv(path, arc, residuals: Sequence[float]) -> int:
    d = arc.y.shape[1]
    rows = (
        [t, *y, *q, int(k), r, flag or "-"]
        for t, y, q, k, r, flag in zip(arc.t, arc.y, arc.p, arc.u_index, residuals, arc.flags)
    )
    return write_csv(path, arc_header(d), rows)


def trajectory_header(d: int, m: int) -> list[str]:
    return ["t", *(f"y{i + 1}" for i in range(d)), "u_index", *(f"u{i + 1}" for i in range(m))]


def write_trajectory_csv(path, traj) -> int:
    """One row per node; the control columns hold the control used on the following step."""
    d = traj.y.shape[1]
    m = traj.controls.shape[1] if traj.controls.ndim == 2 and traj.controls.size else 0
    rows = []
    for i, (t, y) in enumerate(zip(traj.t, traj.y)):
        if i < len(traj.u_index):
            rows.append([t, *y, int(traj.u_index[i]), *traj.controls[i]])
        else:
            rows.append([t, *y, -1, *([float("nan")] * m)])
    return write_csv(path, trajectory_header(d, m), rows)


def write_boundary_csv(path, points) -> int:
    d = len(points[0].x) if points else 2
    header = [*(f"x{i + 1}" for i in range(d)), *(f"xi{i + 1}" for i in range(d)), "margin", "class"]
    return write_csv(path, header, (bp.as_row() for bp in points))


def write_polylines_csv(path, curves: Sequence[np.ndarray], d: int = 2) -> int:
    header = ["curve", "index", *(f"x{i + 1}" for i in range(d))]
    rows = ([c, j, *pt] for c, poly in enumerate(curves) for j, pt in enumerate(poly))
    return write_csv(path, header, rows)


def write_mask_csv(path, grid: Grid, masks: dict[str, np.ndarray]) -> int:
    names = list(masks)
    X = grid.nodes().reshape(-1, grid.d)
    flat = [np.asarray(masks[k]).reshape(-1) for k in names]
    header = [*(f"x{i + 1}" for i in range(grid.d)), *names]
    rows = ([*x, *(int(m[i]) for m in flat)] for i, x in enumerate(X))
    return write_csv(path, header, rows)


def write_convergence_csv(path, rows) -> int:
    from .benchmarks import CONVERGENCE_HEADER

    return write_csv(path, CONVERGENCE_HEADER, (r.as_row() for r in rows))


# -- masks ------------------------------------------------------------------------------
def rle_encode(mask: np.ndarray) -> dict:
    """Run lengths of a boolean array in row-major order, starting with a run of ``False``."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return {"shape": list(np.shape(mask)), "runs": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return {"shape": list(np.shape(mask)), "runs": [int(r) for r in runs]}


def rle_decode(enc: dict) -> np.ndarray:
    out = []
    val = False
    for r in enc["runs"]:
        out.extend([val] * int(r))
        val = not val
    return np.array(out, dtype=bool).reshape(enc["shape"])


# -- JSON --------------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, data) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, non-finite floats as strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


# -- gnuplot -------------------------------------------------------------------------------
def write_gnuplot_field(path, csv_name: str, title: str = "") -> None:
    script = (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set view map\n"
        "set palette rgbformulae 33,13,10\n"
        f"splot '{csv_name}' every ::1 using 1:2:($4 eq 'CONVERGED' ? $3 : 1/0) with points pt 5 ps 0.3 palette notitle\n"
    )
    Path(path).write_text(script)


def write_gnuplot_curves(path, csv_names: Sequence[str], title: str = "") -> None:
    lines = [
        "set datafile separator ','",
        f"set title '{title}'",
        "set size ratio -1",
    ]
    parts = [f"'{name}' every ::1 using 2:3 with lines title '{Path(name).stem}'" for name in csv_names]
    if parts:
        lines.append("plot " + ", \\\n     ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")
