"""Model checkpoint file format.

Layout (little-endian throughout):

    magic   4 bytes  b"AFGC"
    version u16      currently 1
    count   u32      number of entries
    entry   repeated count times:
        name_len u16, name utf-8 bytes,
        ndim u8, dims ndim x u32,
        payload prod(dims) x f32

Payloads are always stored as float32; loaders cast up when a model runs
in float64. Shape validation against the expected parameter map is part
of loading, not an afterthought: a checkpoint naming unknown tensors or
carrying wrong shapes is rejected.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AFGC"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def save_checkpoint(arrays: dict[str, np.ndarray], path) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        data = np.asarray(arr, dtype="<f4")
        if data.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
            data = np.ascontiguousarray(data)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def read(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise TruncatedCheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out


def load_checkpoint(path, expected_shapes: dict[str, tuple] | None = None
                    ) -> dict[str, np.ndarray]:
    r = _Reader(Path(path).read_bytes(), path)
    if r.read(4, "magic") != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<H", r.read(2, "version"))
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", r.read(4, "entry count"))
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", r.read(2, f"entry {i} name length"))
        name = r.read(name_len, f"entry {i} name").decode("utf-8")
        (ndim,) = struct.unpack("<B", r.read(1, f"{name} ndim"))
        shape = struct.unpack(f"<{ndim}I", r.read(4 * ndim, f"{name} dims"))
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = r.read(4 * n_items, f"{name} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        out[name] = arr
    if r.off != len(r.blob):
        raise TruncatedCheckpointError(
            f"{path}: {len(r.blob) - r.off} trailing bytes after last entry"
        )
    if expected_shapes is not None:
        _validate_shapes(out, expected_shapes, path)
    return out


def _validate_shapes(arrays, expected, path):
    missing = sorted(expected.keys() - arrays.keys())
    extra = sorted(arrays.keys() - expected.keys())
    if missing or extra:
        raise ShapeMismatchError(
            f"{path}: parameter names do not match (missing={missing}, unexpected={extra})"
        )
    for name, arr in arrays.items():
        if tuple(arr.shape) != tuple(expected[name]):
            raise ShapeMismatchError(
                f"{path}: {name} has shape {arr.shape}, expected {tuple(expected[name])}"
            )
