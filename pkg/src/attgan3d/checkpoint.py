"""Versioned binary container for named arrays.

Layout, all little-endian:
  magic "A3DG", u32 version, u32 array count, then per array:
  u16 name length, UTF-8 name, u8 dtype tag (0 = f32, 1 = f64, 2 = u64),
  u8 rank, rank x u64 dims, raw row-major data. Trailing u64 global step.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"A3DG"
VERSION = 1

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u8")}
_KIND_TO_TAG = {("f", 4): 0, ("f", 8): 1, ("u", 8): 2}


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


def _dtype_tag(arr: np.ndarray) -> int:
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _KIND_TO_TAG:
        raise CheckpointError(f"unsupported array dtype {arr.dtype}")
    return _KIND_TO_TAG[key]


def write_arrays(path, arrays: "OrderedDict[str, np.ndarray]", step: int) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"array name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _dtype_tag(arr), arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        tag = _dtype_tag(arr)
        chunks.append(arr.astype(_TAG_TO_DTYPE[tag], copy=False).tobytes())
    chunks.append(struct.pack("<Q", step))
    Path(path).write_bytes(b"".join(chunks))


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedCheckpoint(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.blob)}")
        piece = self.blob[self.pos:self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_arrays(path) -> "tuple[OrderedDict[str, np.ndarray], int]":
    cur = _Cursor(Path(path).read_bytes())
    if cur.take(4) != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    (version,) = cur.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: format version {version}, expected {VERSION}")
    (count,) = cur.unpack("<I")
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        tag, rank = cur.unpack("<BB")
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
        dims = cur.unpack(f"<{rank}Q") if rank else ()
        dt = _TAG_TO_DTYPE[tag]
        n_items = int(np.prod(dims, dtype=np.uint64)) if rank else 1
        raw = cur.take(n_items * dt.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
    (step,) = cur.unpack("<Q")
    return arrays, step
