"""Sparse tensor files.

Layout (little-endian)::

    magic b"SSCT"  version u32  d u32  m u32  n u64
    stride: d x u32
    coords: n x d int32
    feats:  n x m float32
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .tensor import SparseTensor

MAGIC = b"SSCT"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


def encode_tensor(x: SparseTensor) -> bytes:
    d, m, n = x.dim, x.num_channels, len(x)
    parts = [_HEADER.pack(MAGIC, VERSION, d, m, n), struct.pack(f"<{d}I", *x.stride),
             np.asarray(x.coords, dtype="<i4").tobytes(),
             np.asarray(x.feats.data, dtype="<f4").tobytes()]
    return b"".join(parts)


def decode_tensor(blob: bytes, source: str = "<bytes>") -> SparseTensor:
    if len(blob) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, version, d, m, n = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at offset 4")
    if d not in (1, 2, 3, 4):
        raise FormatError(f"{source}: implausible dimension {d} at offset 8")
    pos = _HEADER.size
    need = pos + 4 * d + 4 * n * d + 4 * n * m
    if len(blob) != need:
        raise FormatError(f"{source}: expected {need} bytes, found {len(blob)}")
    stride = struct.unpack_from(f"<{d}I", blob, pos)
    pos += 4 * d
    coords = np.frombuffer(blob, dtype="<i4", count=n * d, offset=pos).reshape(n, d).astype(np.int64)
    pos += 4 * n * d
    feats = np.frombuffer(blob, dtype="<f4", count=n * m, offset=pos).reshape(n, m).astype(np.float64)
    return SparseTensor.from_arrays(coords, feats, stride)


def write_tensor(path, x: SparseTensor) -> None:
    Path(path).write_bytes(encode_tensor(x))


def read_tensor(path) -> SparseTensor:
    return decode_tensor(Path(path).read_bytes(), str(path))
