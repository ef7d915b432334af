"""Binary checkpoint format.

Layout: magic "CGAN", u32 version, u64 step, tensor table, optimizer
table, 16 bytes of rng state. A table is a u32 entry count followed by
entries of (u32 name length, UTF-8 name, u32 rank, u64 dims...,
little-endian float64 values). Entries are written sorted by name, so
save -> load -> save is byte-identical.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CGAN"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    """Wrong magic or unsupported version."""


class CheckpointTruncatedError(CheckpointError):
    """File ended before the declared contents."""


class CheckpointShapeError(CheckpointError):
    """Stored tensors do not match the receiving model."""


@dataclass
class CheckpointPayload:
    step: int
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray]
    rng_state: bytes


def _write_table(parts: list[bytes], table: dict[str, np.ndarray]) -> None:
    parts.append(struct.pack("<I", len(table)))
    for name in sorted(table):
        # ascontiguousarray would promote rank-0 arrays to shape (1,)
        arr = np.asarray(table[name], dtype="<f8")
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())


def checkpoint_bytes(payload: CheckpointPayload) -> bytes:
    if len(payload.rng_state) != 16:
        raise ValueError("rng state must be 16 bytes")
    parts: list[bytes] = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", payload.step)]
    _write_table(parts, payload.tensors)
    _write_table(parts, payload.optimizer)
    parts.append(payload.rng_state)
    return b"".join(parts)


def save_checkpoint_file(payload: CheckpointPayload, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _read_table(r: _Reader) -> dict[str, np.ndarray]:
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u64() for _ in range(rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
        out[name] = arr
    return out


def parse_checkpoint(data: bytes) -> CheckpointPayload:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointVersionError(f"bad magic {magic!r}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported version {version}")
    step = r.u64()
    tensors = _read_table(r)
    optimizer = _read_table(r)
    rng_state = r.take(16)
    if r.pos != len(data):
        raise CheckpointTruncatedError(f"{len(data) - r.pos} trailing bytes after rng state")
    return CheckpointPayload(step, tensors, optimizer, rng_state)


def load_checkpoint_file(path: str) -> CheckpointPayload:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
