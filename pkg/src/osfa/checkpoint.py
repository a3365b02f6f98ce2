"""Flat binary container for named tensors ("OSFA1" format).

Layout, all integers little-endian:

    magic   5 bytes   b"OSFA1"
    record  repeated until EOF:
        name_len   uint64
        name       name_len bytes, UTF-8
        rank       uint64
        extents    rank * uint64
        values     prod(extents) * float32, row-major

Values are stored as raw 32-bit floats, so a float32 tensor round-trips
bit-exactly. Records are written in sorted-name order, which makes the file
a canonical function of its contents.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"OSFA1"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, tensors: dict[str, Tensor | np.ndarray]) -> None:
    path = Path(path)
    blobs = []
    for name in sorted(tensors):
        arr = tensors[name]
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        # asarray (not ascontiguousarray): the latter promotes 0-d to 1-d
        data = np.asarray(data, dtype="<f4", order="C")
        name_b = name.encode("utf-8")
        blobs.append(struct.pack("<Q", len(name_b)))
        blobs.append(name_b)
        blobs.append(struct.pack("<Q", data.ndim))
        blobs.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        blobs.append(data.tobytes())
    path.write_bytes(MAGIC + b"".join(blobs))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:5]!r}, expected {MAGIC!r}")
    out: dict[str, np.ndarray] = {}
    off = 5
    total = len(raw)
    while off < total:
        if off + 8 > total:
            raise CheckpointError(f"{path}: truncated record header at byte {off}")
        (name_len,) = struct.unpack_from("<Q", raw, off)
        off += 8
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<Q", raw, off)
        off += 8
        extents = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        count = int(np.prod(extents)) if rank else 1
        nbytes = 4 * count
        if off + nbytes > total:
            raise CheckpointError(f"{path}: truncated values for tensor {name!r}")
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(extents)
        off += nbytes
        out[name] = values.copy()
    return out
