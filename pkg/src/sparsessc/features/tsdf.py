"""Flipped truncated signed distance samples from a range image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import GridGeometry
from .projection import RangeImage, pixel_of


@dataclass(frozen=True, eq=False)
class TsdfSamples:
    coords: np.ndarray  # (k, 3) voxel indices
    values: np.ndarray  # (k,) in [-1, 1]

    def __len__(self):
        return len(self.values)


def ftsdf_value(s, tau: float):
    """sign(s) * (1 - |s| / tau), with sign(0) = +1; magnitude 1 on the surface.

    ``s`` is the signed distance along the ray, positive in front of the surface.
    """
    s = np.asarray(s, dtype=np.float64)
    sign = np.where(s >= 0, 1.0, -1.0)
    return sign * (1.0 - np.abs(s) / tau)


def compute_ftsdf(ri: RangeImage, geometry: GridGeometry = GridGeometry(), tau: float = 0.6,
                  chunk: int = 1 << 20) -> TsdfSamples:
    """Samples for every voxel whose centre projects to a valid pixel with |s| < tau.

    s = pixel depth - distance from the sensor to the voxel centre.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    dims = np.asarray(geometry.dims)
    total = int(np.prod(dims))
    depth = ri.depth
    coords_out, values_out = [], []
    for start in range(0, total, chunk):
        lin = np.arange(start, min(start + chunk, total))
        ijk = np.stack(np.unravel_index(lin, tuple(dims)), axis=1)
        centers = geometry.centers(ijk)
        row, col, rng = pixel_of(centers, ri.config)
        hit = row >= 0
        d = np.zeros(len(lin))
        d[hit] = depth[row[hit], col[hit]]
        s = d - rng
        keep = hit & (d > 0) & (np.abs(s) < tau)
        coords_out.append(ijk[keep])
        values_out.append(ftsdf_value(s[keep], tau))
    return TsdfSamples(np.concatenate(coords_out).astype(np.int64), np.concatenate(values_out))
