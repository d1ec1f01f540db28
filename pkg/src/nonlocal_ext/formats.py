"""On-disk formats: binary grids, line-delimited records, CSV profiles.

All files start with a versioned header; see ``docs/formats.md``.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .geometry import INF, Domain, GeometryError, as_points

GRID_MAGIC = b"NLXGRID\0"
GRID_VERSION = 1
RECORD_VERSION = 1


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------- binary grids

def write_grid(path, values, origin, spacing):
    """Row-major float64 samples with header (magic, version, d, resolution, origin, spacing)."""
    values = np.ascontiguousarray(values, dtype="<f8")
    d = values.ndim
    origin = np.asarray(origin, float).reshape(d)
    spacing = np.asarray(spacing, float).reshape(d)
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<II", GRID_VERSION, d))
        fh.write(struct.pack(f"<{d}I", *values.shape))
        fh.write(struct.pack(f"<{d}d", *origin))
        fh.write(struct.pack(f"<{d}d", *spacing))
        fh.write(values.tobytes(order="C"))


def read_grid(path):
    """Returns (values, origin, spacing)."""
    raw = Path(path).read_bytes()
    if raw[:8] != GRID_MAGIC:
        raise FormatError(f"{path}: not a grid file")
    version, d = struct.unpack_from("<II", raw, 8)
    if version != GRID_VERSION:
        raise FormatError(f"{path}: unsupported grid version {version}")
    if d not in (1, 2):
        raise FormatError(f"{path}: dimension {d} not supported")
    off = 16
    shape = struct.unpack_from(f"<{d}I", raw, off)
    off += 4 * d
    origin = np.array(struct.unpack_from(f"<{d}d", raw, off))
    off += 8 * d
    spacing = np.array(struct.unpack_from(f"<{d}d", raw, off))
    off += 8 * d
    n = int(np.prod(shape))
    if len(raw) - off != 8 * n:
        raise FormatError(f"{path}: expected {n} samples, found {(len(raw) - off) // 8}")
    if np.any(spacing <= 0):
        raise FormatError(f"{path}: spacing must be positive")
    values = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
    return values, origin, spacing


def _interp(values, origin, spacing, x):
    """Multilinear interpolation, clamped to the grid."""
    d = values.ndim
    u = (x - origin) / spacing
    shape = np.array(values.shape)
    u = np.clip(u, 0.0, shape - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), shape - 2)
    t = u - i0
    out = np.zeros(len(x))
    for corner in range(2 ** d):
        bits = [(corner >> j) & 1 for j in range(d)]
        w = np.ones(len(x))
        idx = []
        for j, b in enumerate(bits):
            w = w * (t[:, j] if b else 1.0 - t[:, j])
            idx.append(i0[:, j] + b)
        out += w * values[tuple(idx)]
    return out


class GridDomain(Domain):
    """Omega = {sdf < 0} for a sampled signed distance (negative inside).

    Distances are interpolated multilinearly; ``distance_bounds`` widens them
    by the half-diagonal of a grid cell, which covers the interpolation error
    of a sampled 1-Lipschitz function.  Outside the grid the distance is the
    clamped value plus the distance to the grid box.
    """

    name = "grid"

    def __init__(self, values, origin, spacing, name="grid"):
        values = np.asarray(values, float)
        d = values.ndim
        if d not in (1, 2):
            raise GeometryError("grid domains must be 1- or 2-dimensional")
        if min(values.shape) < 2:
            raise GeometryError("grid needs at least two samples per axis")
        self.values = values
        self.origin = np.asarray(origin, float).reshape(d)
        self.spacing = np.asarray(spacing, float).reshape(d)
        self.hi = self.origin + self.spacing * (np.array(values.shape) - 1)
        inside = values < 0
        if not inside.any() or inside.all():
            raise GeometryError("grid has no boundary (sdf does not change sign)")
        edge = np.ones(values.shape, dtype=bool)
        edge[tuple(slice(1, -1) for _ in range(d))] = False
        if inside[edge].any():
            raise GeometryError("Omega must stay inside the grid (negative sdf on the grid edge)")
        idx = np.argwhere(inside)
        lo = self.origin + self.spacing * (idx.min(0) - 1)
        hi = self.origin + self.spacing * (idx.max(0) + 1)
        inr = float(-values.min())
        super().__init__(d, (lo, hi), inr, INF, {"shape": list(values.shape)})
        self.name = name
        self.err = 0.5 * float(np.linalg.norm(self.spacing))

    @classmethod
    def from_file(cls, path):
        values, origin, spacing = read_grid(path)
        return cls(values, origin, spacing, name=f"grid:{Path(path).name}")

    def _sdf(self, x):
        x = as_points(x, self.d)
        clamped = np.clip(x, self.origin, self.hi)
        out = _interp(self.values, self.origin, self.spacing, clamped)
        return out + np.linalg.norm(x - clamped, axis=1)

    def contains(self, x):
        return self._sdf(x) < 0

    def delta(self, x):
        return np.abs(self._sdf(x))

    def distance_bounds(self, x):
        dist = self.delta(x)
        return np.maximum(dist - self.err, 0.0), dist + self.err

    def nearest_boundary(self, x, iters=8):
        x = as_points(x, self.d).copy()
        h = 1e-3 * float(self.spacing.min())
        e = h * np.eye(self.d)
        for _ in range(iters):
            s = self._sdf(x)
            g = np.stack([(self._sdf(x + e[j]) - self._sdf(x - e[j])) / (2 * h) for j in range(self.d)], axis=1)
            n2 = np.maximum(np.sum(g * g, axis=1), 1e-300)
            x = x - (s / n2)[:, None] * g
        return x


# --------------------------------------------------------------------------- records

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def dumps_record(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def write_records(path, kind, records, **header):
    """Line-delimited JSON: a header line ``{"format": kind, "version": 1, ...}`` then one record per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_record({"format": kind, "version": RECORD_VERSION, **header}) + "\n")
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def read_records(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty")
    header = json.loads(lines[0])
    if header.get("version") != RECORD_VERSION:
        raise FormatError(f"{path}: unsupported record version {header.get('version')}")
    return header, [json.loads(s) for s in lines[1:]]


def write_csv(path, kind, columns, rows):
    """CSV with a leading ``# format=<kind> version=1`` line; floats in repr form."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# format={kind} version={RECORD_VERSION}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if not isinstance(v, str) else v for v in row) + "\n")
