"""Binary model files: magic, named tensors, and a trailing bit-pattern checksum.

Layout (all little-endian):
  magic "PDIF1" | u32 tensor count |
  per tensor: u32 name length, name utf-8, u32 rank, u64 dims..., f64 values... |
  u64 checksum = sum of every value's 64-bit pattern, mod 2^64.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tensor import ParameterStore

MAGIC = b"PDIF1"


def _checksum(chunks: list[np.ndarray]) -> int:
    total = np.uint64(0)
    for arr in chunks:
        with np.errstate(over="ignore"):
            total += arr.astype("<f8").view(np.uint64).sum(dtype=np.uint64)
    return int(total)


def save_model(store: ParameterStore, path) -> None:
    parts = [MAGIC, struct.pack("<I", len(store))]
    values = []
    for name, param in store.items():
        encoded = name.encode("utf-8")
        flat = np.ascontiguousarray(param.data, dtype="<f8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", flat.ndim))
        parts.append(struct.pack(f"<{flat.ndim}Q", *flat.shape))
        parts.append(flat.tobytes())
        values.append(flat.reshape(-1))
    parts.append(struct.pack("<Q", _checksum(values)))
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError(f"{self.path}: truncated model file at byte {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_model(path) -> ParameterStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    count = r.u32()
    store = ParameterStore()
    values = []
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = [r.u64() for _ in range(rank)]
        n_vals = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(8 * n_vals), dtype="<f8").reshape(dims).copy()
        store.add(name, arr)
        values.append(arr.reshape(-1))
    stated = r.u64()
    if r.pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - r.pos} trailing bytes after checksum")
    actual = _checksum(values)
    if stated != actual:
        raise ValueError(f"{path}: checksum mismatch "
                         f"(file {stated:#018x}, computed {actual:#018x})")
    return store
