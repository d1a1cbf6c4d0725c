"""Snapshot files, diagnostics CSV and JSON-lines reports.

Snapshot layout (little-endian)::

    magic  b"NLCH"
    u32    version (1)
    u32    dimension n
    n*u32  cells per axis
    f64    time
    f64    mean m
    f64    alpha
    u32    potential family id
    f64[]  cell values, row-major
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SnapshotError
from .operators import State

__all__ = [
    "Snapshot",
    "write_snapshot",
    "read_snapshot",
    "CSV_COLUMNS",
    "DiagnosticsWriter",
    "SnapshotWriter",
    "read_diagnostics",
    "write_jsonl",
    "certificate",
]

MAGIC = b"NLCH"
VERSION = 1
CSV_COLUMNS = ("t", "mass", "energy", "dissipation_cum", "max_c", "min_c", "newton_iters")


@dataclass
class Snapshot:
    state: State
    cells: tuple
    alpha: float
    family_id: int
    version: int = VERSION


def write_snapshot(state: State, path, cells, alpha: float = 0.0, family_id: int = 0) -> None:
    """Write ``state`` with its grid shape and model tags."""
    cells = tuple(int(c) for c in np.atleast_1d(cells))
    c = np.ascontiguousarray(np.asarray(state.c, dtype="<f8").ravel())
    if c.size != int(np.prod(cells)):
        raise SnapshotError(f"state has {c.size} values, cells {cells} need {int(np.prod(cells))}")
    head = MAGIC + struct.pack("<II", VERSION, len(cells)) + struct.pack(f"<{len(cells)}I", *cells)
    head += struct.pack("<dddI", state.t, state.m, alpha, family_id)
    tmp = Path(str(path) + ".part")
    with open(tmp, "wb") as fh:
        fh.write(head)
        fh.write(c.tobytes())
    tmp.replace(path)


def read_snapshot(path) -> Snapshot:
    """Read and validate a snapshot; no partial state is ever returned."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc.strerror}") from None
    if len(data) < 12:
        raise SnapshotError("snapshot is truncated (header)")
    if data[:4] != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version} (this reader handles version {VERSION})")
    if dim not in (1, 2):
        raise SnapshotError(f"invalid dimension {dim}")
    off = 12
    need = off + 4 * dim + 28
    if len(data) < need:
        raise SnapshotError("snapshot is truncated (header)")
    cells = struct.unpack_from(f"<{dim}I", data, off)
    off += 4 * dim
    t, m, alpha, fam = struct.unpack_from("<dddI", data, off)
    off += 28
    n = int(np.prod(cells))
    if len(data) != off + 8 * n:
        raise SnapshotError(f"snapshot payload has {len(data) - off} bytes, expected {8 * n}")
    c = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(float)
    if abs(float(np.mean(c)) - m) > 1e-12:
        raise SnapshotError(f"recorded mean {m!r} does not match payload mean {float(np.mean(c))!r}")
    return Snapshot(State(c, m, t), tuple(cells), alpha, fam, version)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


class DiagnosticsWriter:
    """Trajectory sink writing one CSV row every ``stride`` steps (and the last one)."""

    def __init__(self, path, stride: int = 1):
        self.path = Path(path)
        self.stride = max(1, int(stride))
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)
        self._last = -1

    def __call__(self, traj, state, k):
        if k % self.stride == 0:
            self._write(traj, len(traj.times) - 1)

    def _write(self, traj, i):
        row = (traj.times[i], traj.masses[i], traj.energies[i], traj.dissipation[i], traj.max_c[i],
               traj.min_c[i], traj.newton_iters[i])
        self._writer.writerow([_fmt(v) for v in row])
        self._last = i

    def close(self, traj=None):
        if traj is not None and traj.times and self._last != len(traj.times) - 1:
            self._write(traj, len(traj.times) - 1)
        self._fh.close()


class SnapshotWriter:
    """Trajectory sink writing ``snap_<step>.nlch`` every ``stride`` steps."""

    def __init__(self, directory, cells, alpha: float, family_id: int, stride: int):
        self.directory = Path(directory)
        self.cells = cells
        self.alpha = alpha
        self.family_id = family_id
        self.stride = int(stride)
        self.written: list[Path] = []

    def __call__(self, traj, state, k):
        if self.stride and k % self.stride == 0:
            self.write(state, k)

    def write(self, state, k):
        p = self.directory / f"snap_{k:07d}.nlch"
        write_snapshot(state, p, self.cells, self.alpha, self.family_id)
        self.written.append(p)


def read_diagnostics(path) -> dict:
    """Columns of a diagnostics CSV as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise SnapshotError(f"{path} is not a diagnostics file")
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(CSV_COLUMNS))
    return {name: body[:, i] for i, name in enumerate(CSV_COLUMNS)}


def certificate(check: str, value: float, threshold: float, passed: bool) -> dict:
    return {"check": check, "value": float(value), "threshold": float(threshold), "pass": bool(passed)}


def write_jsonl(records, path=None, stream=None) -> None:
    lines = [json.dumps(r, sort_keys=False) for r in records]
    if path is not None:
        Path(path).write_text("".join(line + "\n" for line in lines))
    if stream is not None:
        for line in lines:
            stream.write(line + "\n")
