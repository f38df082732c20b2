# snapshots.py
"""
Field snapshots and tables on disk.

Binary snapshot (.snap): one JSON header line, then the node data as
little-endian float64 in row-major node order. Round trip is bit-exact.

CSV (.csv): "# key=value" header lines, then a pandas table written with 17
significant digits. Headers never carry wall-clock time.
"""

import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .grid import Grid

FLOAT_FORMAT = "%.17g"
COMPONENT_NAMES = {2: ["v1", "v2"], 3: ["d1", "d2", "d3"]}
INDEX_NAMES = ["i", "j"]


@dataclass
class Snapshot:
    data: np.ndarray
    header: Dict[str, Any]

    @property
    def time(self) -> float:
        return float(self.header.get("time", float("nan")))


# -------------------------------------------------------------------
# Headers
# -------------------------------------------------------------------
def grid_header(grid: Grid) -> Dict[str, Any]:
    return {
        "dimension": grid.dim,
        "counts": list(grid.counts),
        "extents": list(grid.extents),
        "spacing": list(grid.spacing),
    }


def _header(meta: Optional[Dict[str, Any]], **fields: Any) -> Dict[str, Any]:
    header = {"version": __version__}
    header.update(fields)
    if meta:
        header.update(meta)
    return header


def _write_comment_header(f, header: Dict[str, Any]) -> None:
    for key in sorted(header):
        f.write(f"# {key}={json.dumps(header[key], sort_keys=True)}\n")


def _read_comment_header(path: str) -> Tuple[Dict[str, Any], int]:
    header: Dict[str, Any] = {}
    skip = 0
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, raw = line[2:].rstrip("\n").partition("=")
            try:
                header[key] = json.loads(raw)
            except json.JSONDecodeError:
                header[key] = raw
            skip += 1
    return header, skip


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


# -------------------------------------------------------------------
# Tables
# -------------------------------------------------------------------
def write_table(path: str, frame: pd.DataFrame, meta: Optional[Dict[str, Any]] = None) -> None:
    _ensure_parent(path)
    with open(path, "w", newline="") as f:
        _write_comment_header(f, _header(meta))
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)


def read_table(path: str):
    header, skip = _read_comment_header(path)
    return pd.read_csv(path, skiprows=skip), header


# -------------------------------------------------------------------
# Field snapshots
# -------------------------------------------------------------------
def _node_frame(grid: Grid, field: np.ndarray, names: Sequence[str]) -> pd.DataFrame:
    idx = np.indices(grid.shape).reshape(grid.dim, -1)
    cols = {INDEX_NAMES[k]: idx[k] for k in range(grid.dim)}
    flat = field.reshape(grid.n_nodes, -1)
    for k, name in enumerate(names):
        cols[name] = flat[:, k]
    return pd.DataFrame(cols)


def write_snapshot(path: str, grid: Grid, field: np.ndarray, time: float,
                   meta: Optional[Dict[str, Any]] = None) -> None:
    field = np.asarray(field, dtype=float)
    components = field.shape[-1]
    header = _header(meta, time=time, components=components, **grid_header(grid))
    _ensure_parent(path)
    if path.endswith(".csv"):
        names = COMPONENT_NAMES.get(components, [f"c{k}" for k in range(components)])
        write_table(path, _node_frame(grid, field, names), header)
        return
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        f.write(np.ascontiguousarray(field).astype("<f8").tobytes(order="C"))


def read_snapshot(path: str) -> Snapshot:
    if path.endswith(".csv"):
        frame, header = read_table(path)
        counts = tuple(header["counts"])
        dim = header["dimension"]
        values = frame.drop(columns=INDEX_NAMES[:dim]).to_numpy(dtype=float)
        return Snapshot(values.reshape(counts + (values.shape[1],)), header)
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    shape = tuple(header.get("leading", [])) + tuple(header["counts"]) + (header["components"],)
    return Snapshot(data.reshape(shape), header)


def write_control_trajectory(path: str, grid: Grid, f: np.ndarray, times: Sequence[float],
                             meta: Optional[Dict[str, Any]] = None) -> None:
    """
    Control slabs f^0..f^{N-1}. Binary form stores the full (N, *shape, 2) array
    with the slab start times in the header; CSV keeps only the control-region nodes.
    """
    f = np.asarray(f, dtype=float)
    times = [float(t) for t in times]
    if path.endswith(".csv"):
        idx = np.argwhere(grid.mask)
        frames = []
        for n, t in enumerate(times):
            cols = {"slab": n, "t_start": t}
            for k in range(grid.dim):
                cols[INDEX_NAMES[k]] = idx[:, k]
            values = f[n][grid.mask]
            cols["f1"], cols["f2"] = values[:, 0], values[:, 1]
            frames.append(pd.DataFrame(cols))
        write_table(path, pd.concat(frames, ignore_index=True), _header(meta, **grid_header(grid)))
        return
    header = _header(meta, times=times, components=f.shape[-1], leading=[f.shape[0]],
                     **grid_header(grid))
    _ensure_parent(path)
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(f).astype("<f8").tobytes(order="C"))
