"""Binary snapshots of a distribution field.

Layout (all little-endian)::

    b"ESBG"                      magic
    u32 version                  currently 1
    u32 spatial_dims
    u32 N_x[i]                   one per spatial axis
    u32 N_v
    f64 L[i]                     one per spatial axis
    f64 V_max
    f64 t
    f64 values[...]              row-major, spatial axes outermost

The velocity offset is not stored: cell-centred grids need an even
``N_v`` and node-centred grids an odd one, so ``N_v`` determines it.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import SnapshotFormatError
from ..grid import build_grid
from ..integrator import DistributionField

MAGIC = b"ESBG"
VERSION = 1


def encode_snapshot(F: DistributionField) -> bytes:
    g = F.grid
    head = [MAGIC, struct.pack("<II", VERSION, g.spatial_dims)]
    head.append(struct.pack(f"<{g.spatial_dims}I", *g.spatial_counts))
    head.append(struct.pack("<I", g.velocity_counts))
    head.append(struct.pack(f"<{g.spatial_dims}d", *g.spatial_extent))
    head.append(struct.pack("<dd", g.velocity_halfwidth, F.t))
    body = np.ascontiguousarray(F.values, dtype="<f8").tobytes()
    return b"".join(head) + body


def write_snapshot(F: DistributionField, path) -> None:
    """Write atomically: the file appears complete or not at all."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_snapshot(F))
    os.replace(tmp, path)


def decode_snapshot(data: bytes) -> DistributionField:
    if len(data) < 12 or data[:4] != MAGIC:
        raise SnapshotFormatError("not a snapshot file (bad magic)")
    version, dims = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    if dims not in (1, 2, 3):
        raise SnapshotFormatError(f"invalid spatial dimension {dims}")
    off = 12
    header = off + 4 * dims + 4 + 8 * dims + 16
    if len(data) < header:
        raise SnapshotFormatError("size mismatch: truncated header")
    counts = struct.unpack_from(f"<{dims}I", data, off)
    off += 4 * dims
    (nv,) = struct.unpack_from("<I", data, off)
    off += 4
    extent = struct.unpack_from(f"<{dims}d", data, off)
    off += 8 * dims
    vmax, t = struct.unpack_from("<dd", data, off)
    off += 16
    n = int(np.prod(counts, dtype=np.int64)) * nv**3
    if len(data) - off != 8 * n:
        raise SnapshotFormatError(f"size mismatch: header implies {8 * n} value bytes, found {len(data) - off}")
    grid = build_grid(dims, extent, counts, vmax, nv, "node" if nv % 2 else "cell")
    values = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64).reshape(grid.shape)
    return DistributionField(grid, values, t)


def read_snapshot(path) -> DistributionField:
    return decode_snapshot(Path(path).read_bytes())
