"""Field serialization: a flat little-endian binary format and CSV.

Binary layout (all little-endian)::

    offset  size  content
    0       8     magic b"DUALFLD1"
    8       4     uint32 format version (1)
    12      4     uint32 kind (0 vector, 1 symmetric matrix, 2 player, 3 scalar)
    16      4     uint32 nt (0 for a single time slice)
    20      4     uint32 nx
    24      4     uint32 m (spatial dimension)
    28      4     uint32 number of component values per node
    32      4     uint32 dtype code (1 = float64)
    36      4     reserved (0)
    40      8     float64 T
    48      16    reserved (0)
    64      ...   float64 data in C order: time, x_1, ..., x_m, components
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import GridMismatchError
from .fields import SpaceTimeGrid

MAGIC = b"DUALFLD1"
VERSION = 1
KINDS = {"vector": 0, "matrix": 1, "player": 2, "scalar": 3}
_HEADER = struct.Struct("<8s8I d 16x")
assert _HEADER.size == 64


def _component_shape(kind, ncomp):
    if kind == "matrix":
        n = int(round(ncomp ** 0.5))
        return (n, n)
    if kind == "scalar":
        return ()
    return (ncomp,)


def write_field(path, field, grid: SpaceTimeGrid, kind="vector"):
    """Write ``field`` (full space-time or a single slice) in the binary format."""
    if kind not in KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    field = np.asarray(field, dtype="<f8")
    ncomp_axes = {"vector": 1, "player": 1, "matrix": 2, "scalar": 0}[kind]
    lead = field.ndim - ncomp_axes - grid.m
    spatial = field.shape[lead:lead + grid.m]
    if lead not in (0, 1) or spatial != grid.spatial_shape or (lead and field.shape[0] != grid.nt):
        raise GridMismatchError(f"field of shape {field.shape} does not fit {grid}")
    ncomp = int(np.prod(field.shape[field.ndim - ncomp_axes:], dtype=int))
    nt = grid.nt if lead else 0
    header = _HEADER.pack(MAGIC, VERSION, KINDS[kind], nt, grid.nx, grid.m, ncomp, 1, 0, float(grid.T))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field).tobytes())


def read_field(path):
    """Return ``(array, info)``; ``info`` holds the header fields and the grid."""
    raw = Path(path).read_bytes()
    if len(raw) < 64:
        raise ValueError("file too short for a field header")
    magic, version, kind, nt, nx, m, ncomp, dtype, _, T = _HEADER.unpack(raw[:64])
    if magic != MAGIC:
        raise ValueError("not a field file (bad magic)")
    if version != VERSION or dtype != 1:
        raise ValueError(f"unsupported field file version {version} / dtype {dtype}")
    kind_name = {v: k for k, v in KINDS.items()}[kind]
    shape = ((nt,) if nt else ()) + (nx,) * m + _component_shape(kind_name, ncomp)
    data = np.frombuffer(raw, dtype="<f8", offset=64)
    if data.size != int(np.prod(shape, dtype=int)):
        raise ValueError("payload size does not match the header")
    grid = SpaceTimeGrid(T, nt, m, nx) if nt else None
    info = {"kind": kind_name, "nt": nt, "nx": nx, "m": m, "ncomp": ncomp, "T": T, "grid": grid}
    return data.reshape(shape).astype(float), info


def write_field_csv(path, field, grid: SpaceTimeGrid):
    """One row per node: ``t, x_1..x_m, c_0..c_{k-1}`` (full space-time field)."""
    field = np.asarray(field, dtype=float)
    if field.shape[:grid.m + 1] != grid.shape:
        raise GridMismatchError("CSV export expects a full space-time field")
    flat = field.reshape(grid.shape + (-1,))
    coords = grid.coords().reshape(-1, grid.m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{d + 1}" for d in range(grid.m)]
                   + [f"c{j}" for j in range(flat.shape[-1])])
        for k, t in enumerate(grid.times):
            vals = flat[k].reshape(-1, flat.shape[-1])
            for x, row in zip(coords, vals):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(c)) for c in row])


def read_field_csv(path, grid: SpaceTimeGrid):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(c) for c in r[1 + grid.m:]] for r in rows[1:]])
    return data.reshape(grid.shape + (data.shape[-1],))
