"""Tensor archive ("ABT1") used for checkpoints.

Layout, all little-endian::

    b"ABT1" | u32 count | count × (u16 name_len | name utf-8 | u8 rank | rank × u64 extent | f32 payload)
"""
from __future__ import annotations

import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

from .exceptions import FormatError

MAGIC = b"ABT1"


def write_tensors(f: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        f.write(struct.pack("<H", len(raw)))
        f.write(raw)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated tensor archive: wanted {n} bytes, got {len(data)}")
    return data


def read_tensors(f: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(f, 4) != MAGIC:
        raise FormatError("not a tensor archive (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(f, 1))
        shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        payload = _read_exact(f, 4 * size)
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        write_tensors(f, tensors)


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return read_tensors(f)
