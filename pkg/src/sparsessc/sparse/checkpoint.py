"""Weight checkpoint files.

Layout (little-endian)::

    magic  b"SSCW"   version u32   record count u32
    per record: name length u32, name bytes (utf-8), K u32, d u32, m_in u32, m_out u32,
                K**d * m_in * m_out float32 values
    trailer: crc32 u32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SSCW"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted or incompatible checkpoint."""


def encode(records) -> bytes:
    records = list(records)
    parts = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, k, d, m_in, m_out, arr in records:
        raw = name.encode("utf-8")
        count = k ** d * m_in * m_out
        arr = np.asarray(arr)
        if arr.size != count:
            raise CheckpointError(f"{name}: {arr.size} values, header says {count}")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<IIII", k, d, m_in, m_out))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob: bytes) -> list[tuple]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            k, d, m_in, m_out = struct.unpack_from("<IIII", body, pos)
            pos += 16
            size = k ** d * m_in * m_out
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).astype(np.float64)
            pos += 4 * size
            out.append((name, k, d, m_in, m_out, arr))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes")
    return out


def save(path, module, extra: dict | None = None) -> None:
    """Write a module's parameters and buffers; ``extra`` scalars become 1-value records."""
    records = list(module.records())
    for key, value in (extra or {}).items():
        records.append((f"meta.{key}", 1, 0, 1, 1, np.array([value], dtype=np.float64)))
    Path(path).write_bytes(encode(records))


def load(path, module) -> dict:
    """Restore ``module`` in place; returns the meta scalars."""
    records = decode(Path(path).read_bytes())
    meta = {r[0][5:]: float(r[5][0]) for r in records if r[0].startswith("meta.")}
    expected = {r[0]: r[1:5] for r in module.records()}
    found = {r[0]: r for r in records if not r[0].startswith("meta.")}
    if set(expected) != set(found):
        diff = sorted(set(expected) ^ set(found))[:5]
        raise CheckpointError(f"checkpoint does not match the architecture: {diff}")
    for name, shape in expected.items():
        if found[name][1:5] != shape:
            raise CheckpointError(f"{name}: stored shape {found[name][1:5]} != {shape}")
    module.load_state_dict({name: r[5] for name, r in found.items()})
    return meta
