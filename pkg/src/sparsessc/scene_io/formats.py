"""Point clouds, label grids and their SemanticKITTI-style binary files.

Scans are headerless little-endian float32 quadruples (x, y, z, intensity).
Label grids are little-endian uint16 raw class IDs, one per voxel, linearised
with x slowest and z fastest: ``index = (x * Y + y) * Z + z``. Invalid masks
pack eight voxels per byte in the same order, most significant bit first.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError, MappingError
from ..geometry import GridGeometry
from .classes import NUM_CLASSES, ClassMap, load_class_map


@dataclass(frozen=True, eq=False)
class PointCloud:
    """(n, 4) array of x, y, z in metres and intensity in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.isfinite(pts).all():
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise DataError(f"non-finite value in point {bad}")
        pts = pts.copy()
        pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 4)))

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class DenseLabelGrid:
    """Train class ID per voxel (0 = empty) plus a mask of voxels to ignore."""

    labels: np.ndarray
    invalid: np.ndarray
    geometry: GridGeometry = GridGeometry()

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != tuple(self.geometry.dims):
            raise ValueError(f"labels shape {labels.shape} != grid dims {self.geometry.dims}")
        if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
            raise DataError(f"labels outside 0..{NUM_CLASSES - 1}")
        invalid = np.asarray(self.invalid, dtype=bool)
        if invalid.shape != labels.shape:
            raise ValueError("invalid mask shape differs from labels")
        object.__setattr__(self, "labels", labels.astype(np.uint8))
        object.__setattr__(self, "invalid", invalid)

    @classmethod
    def empty(cls, geometry: GridGeometry = GridGeometry()) -> "DenseLabelGrid":
        dims = tuple(geometry.dims)
        return cls(np.zeros(dims, np.uint8), np.zeros(dims, bool), geometry)

    @property
    def dims(self):
        return self.labels.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.labels > 0

    def equals(self, other: "DenseLabelGrid") -> bool:
        return (np.array_equal(self.labels, other.labels)
                and np.array_equal(self.invalid, other.invalid))


# ---------------------------------------------------------------------- scans

def decode_scan(blob: bytes, source: str = "<bytes>") -> PointCloud:
    if len(blob) % 16:
        raise FormatError(f"{source}: scan length {len(blob)} is not a multiple of 16 bytes "
                          f"(trailing record at offset {len(blob) - len(blob) % 16})")
    pts = np.frombuffer(blob, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise DataError(f"{source}: non-finite value in record {bad} (byte offset {bad * 16})")
    return PointCloud(pts)


def read_scan(path) -> PointCloud:
    return decode_scan(Path(path).read_bytes(), str(path))


def write_scan(path, pc: PointCloud) -> None:
    Path(path).write_bytes(np.asarray(pc.points, dtype="<f4").tobytes())


# --------------------------------------------------------------- label grids

def linear_index(ijk: np.ndarray, dims) -> np.ndarray:
    ijk = np.asarray(ijk, dtype=np.int64)
    _, Y, Z = dims
    return (ijk[..., 0] * Y + ijk[..., 1]) * Z + ijk[..., 2]


def read_label_grid(label_path, invalid_path=None, geometry: GridGeometry = GridGeometry(),
                    class_map: ClassMap | None = None) -> DenseLabelGrid:
    dims = tuple(geometry.dims)
    n = int(np.prod(dims))
    blob = Path(label_path).read_bytes()
    if len(blob) != 2 * n:
        raise FormatError(f"{label_path}: {len(blob)} bytes, expected {2 * n} for grid {dims}")
    raw = np.frombuffer(blob, dtype="<u2")
    class_map = class_map or load_class_map()
    train = class_map.remap(raw)
    if (train < 0).any():
        raise MappingError(f"{label_path}: unknown raw class IDs {class_map.unknown(raw)}")
    if invalid_path is None:
        invalid = np.zeros(n, dtype=bool)
    else:
        packed = Path(invalid_path).read_bytes()
        if len(packed) != (n + 7) // 8:
            raise FormatError(f"{invalid_path}: {len(packed)} bytes, expected {(n + 7) // 8}")
        invalid = np.unpackbits(np.frombuffer(packed, dtype=np.uint8), bitorder="big")[:n]
    return DenseLabelGrid(train.reshape(dims), invalid.reshape(dims).astype(bool), geometry)


def write_label_grid(grid: DenseLabelGrid, label_path, invalid_path=None,
                     class_map: ClassMap | None = None) -> None:
    class_map = class_map or load_class_map()
    raw = class_map.to_raw[grid.labels.astype(np.int64).ravel()]
    Path(label_path).write_bytes(raw.astype("<u2").tobytes())
    if invalid_path is not None:
        packed = np.packbits(grid.invalid.ravel().astype(np.uint8), bitorder="big")
        Path(invalid_path).write_bytes(packed.tobytes())
