"""Voxel grid and spherical projection geometry shared across the pipeline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# points exactly on a voxel face (e.g. a float32 ground plane) land in the upper cell
_FLOOR_EPS = 1e-5


@dataclass(frozen=True)
class GridGeometry:
    """Axis-aligned voxel grid: origin is the minimum corner, in metres."""

    origin: tuple[float, float, float] = (0.0, -25.6, -2.0)
    voxel_size: tuple[float, float, float] = (0.2, 0.2, 0.2)
    dims: tuple[int, int, int] = (256, 256, 32)

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.voxel_size) != 3 or len(self.dims) != 3:
            raise ValueError("origin, voxel_size and dims need three components")
        if min(self.voxel_size) <= 0:
            raise ValueError("voxel_size must be positive")
        if min(self.dims) <= 0:
            raise ValueError("dims must be positive")

    @classmethod
    def desk(cls) -> "GridGeometry":
        """64 x 64 x 16 grid (12.8 m x 12.8 m x 3.2 m) for quick experiments."""
        return cls(origin=(0.0, -6.4, -2.0), voxel_size=(0.2, 0.2, 0.2), dims=(64, 64, 16))

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.voxel_size) * np.asarray(self.dims)

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.dims))

    def to_voxel(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        rel = (xyz - np.asarray(self.origin)) / np.asarray(self.voxel_size)
        return np.floor(rel + _FLOOR_EPS).astype(np.int64)

    def contains(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.asarray(ijk).reshape(-1, len(self.dims))
        return np.all((ijk >= 0) & (ijk < np.asarray(self.dims)), axis=1)

    def centers(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.float64).reshape(-1, 3)
        return np.asarray(self.origin) + (ijk + 0.5) * np.asarray(self.voxel_size)

    def bev(self) -> tuple[int, int]:
        return self.dims[0], self.dims[1]


@dataclass(frozen=True)
class ProjectionConfig:
    """Range-image layout: rows span elevation, columns span azimuth (degrees)."""

    height: int = 64
    width: int = 1024
    fov_up: float = 3.0
    fov_down: float = -25.0
    fov_h: float = 360.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image dims must be positive")
        if self.fov_up <= self.fov_down or self.fov_h <= 0:
            raise ValueError("fields of view must be positive")

    @property
    def fov_v(self) -> float:
        return self.fov_up - self.fov_down

    def pixel_angles(self):
        """Elevation per row and azimuth per column at pixel centres, in radians."""
        rows = np.arange(self.height) + 0.5
        cols = np.arange(self.width) + 0.5
        elev = np.radians(self.fov_up - rows / self.height * self.fov_v)
        azim = np.radians((0.5 - cols / self.width) * self.fov_h)
        return elev, azim

    def pixel_directions(self) -> np.ndarray:
        """Unit ray per pixel centre, shape (height, width, 3)."""
        elev, azim = self.pixel_angles()
        ce, se = np.cos(elev)[:, None], np.sin(elev)[:, None]
        return np.stack([ce * np.cos(azim)[None, :], ce * np.sin(azim)[None, :],
                         np.broadcast_to(se, (self.height, self.width))], axis=-1)

    def rows_cols(self, xyz: np.ndarray):
        """Continuous (row, col) image position and range of each point."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        rng = np.linalg.norm(xyz, axis=1)
        safe = np.where(rng > 0, rng, 1.0)
        elev = np.degrees(np.arcsin(np.clip(xyz[:, 2] / safe, -1.0, 1.0)))
        azim = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
        row = (self.fov_up - elev) / self.fov_v * self.height
        col = (0.5 - azim / self.fov_h) * self.width
        return row, col, rng
