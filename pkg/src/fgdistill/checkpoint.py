"""Versioned binary container of named float64 parameter arrays.

Layout (all integers little-endian):
    magic "FGDK" | u32 version | u32 entry count
    per entry: u16 name length | name utf-8 | u8 ndim | u32 per dim | f64 data
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FgdError
from .fileio import atomic_write_bytes

MAGIC = b"FGDK"
VERSION = 1


class CheckpointError(FgdError):
    """Checkpoint file is missing, truncated, or has the wrong format."""


def serialize_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def deserialize_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    offset = 4
    try:
        version, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            arrays[name] = arr.reshape(shape).astype(np.float64)
        return arrays
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]):
    atomic_write_bytes(path, serialize_arrays(arrays))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return deserialize_arrays(blob)
