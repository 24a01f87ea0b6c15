"""Spherical projection of scans to range images and morphological depth completion."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..geometry import ProjectionConfig


@dataclass(frozen=True, eq=False)
class RangeImage:
    """Depth in metres per pixel; 0 marks an empty pixel."""

    depth: np.ndarray
    config: ProjectionConfig = ProjectionConfig()

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (self.config.height, self.config.width):
            raise ValueError(f"depth shape {d.shape} does not match the projection config")
        if (d < 0).any() or not np.isfinite(d).all():
            raise ValueError("depth must be finite and nonnegative")
        object.__setattr__(self, "depth", d)

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    def unproject(self) -> np.ndarray:
        """3D point per pixel (zeros where empty), shape (H, W, 3)."""
        return self.config.pixel_directions() * self.depth[..., None]


@dataclass(frozen=True, eq=False)
class Projection:
    """A range image plus which pixel each input point fell into.

    ``rows``/``cols`` are -1 for points outside the field of view; ``winner``
    holds, per pixel, the index of the nearest point (-1 if none).
    """

    image: RangeImage
    rows: np.ndarray
    cols: np.ndarray
    winner: np.ndarray
    dropped: int

    @property
    def assigned(self) -> np.ndarray:
        return self.rows >= 0


def pixel_of(xyz: np.ndarray, config: ProjectionConfig):
    """Integer pixel (row, col) and range per point; -1 outside the field of view."""
    row_f, col_f, rng = config.rows_cols(xyz)
    row = np.floor(row_f).astype(np.int64)
    col = np.floor(col_f).astype(np.int64)
    full_circle = abs(config.fov_h - 360.0) < 1e-9
    if full_circle:
        col = np.mod(col, config.width)
    ok = (rng > 0) & (row >= 0) & (row < config.height) & (col >= 0) & (col < config.width)
    return np.where(ok, row, -1), np.where(ok, col, -1), rng


def spherical_project(xyz: np.ndarray, config: ProjectionConfig = ProjectionConfig()) -> Projection:
    """Each pixel keeps the minimum range among the points mapping to it."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    row, col, rng = pixel_of(xyz, config)
    ok = row >= 0
    depth = np.zeros((config.height, config.width))
    winner = np.full((config.height, config.width), -1, dtype=np.int64)
    idx = np.flatnonzero(ok)
    if len(idx):
        pix = row[idx] * config.width + col[idx]
        order = np.lexsort((idx, rng[idx], pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        take = order[first]
        depth.ravel()[pix[take]] = rng[idx[take]]
        winner.ravel()[pix[take]] = idx[take]
    return Projection(RangeImage(depth, config), row, col, winner, int((~ok).sum()))


@dataclass(frozen=True)
class DilationConfig:
    max_depth: float = 100.0
    closing_kernel: int = 5
    hole_kernel: int = 7
    median_kernel: int = 5


def diamond(size: int) -> np.ndarray:
    r = size // 2
    i, j = np.mgrid[-r:r + 1, -r:r + 1]
    return (np.abs(i) + np.abs(j)) <= r


def masked_median(img: np.ndarray, valid: np.ndarray, size: int) -> np.ndarray:
    """Median over the valid pixels of each size x size window (window clipped at borders)."""
    r = size // 2
    h, w = img.shape
    padded = np.full((h + 2 * r, w + 2 * r), np.nan)
    padded[r:r + h, r:r + w] = np.where(valid, img, np.nan)
    stack = np.stack([padded[i:i + h, j:j + w] for i in range(size) for j in range(size)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(stack, axis=0)
    return np.where(valid, med, 0.0)


def dilate_depth(ri: RangeImage, config: DilationConfig = DilationConfig()) -> RangeImage:
    """Fill empty pixels: invert, close, dilate into holes, median-smooth, invert back.

    Closing and hole dilation only write into empty pixels; the median runs
    over every pixel that holds a depth afterwards.
    """
    valid = ri.valid
    if not valid.any():
        return ri
    inv = np.where(valid, np.maximum(config.max_depth - ri.depth, 1e-6), 0.0)
    closed = ndimage.grey_closing(inv, footprint=diamond(config.closing_kernel), mode="nearest")
    inv = np.where(valid, inv, closed)
    holes = inv <= 0
    if holes.any():
        k = config.hole_kernel
        dilated = ndimage.grey_dilation(inv, footprint=np.ones((k, k), bool), mode="nearest")
        inv = np.where(holes, dilated, inv)
    filled = inv > 0
    inv = masked_median(inv, filled, config.median_kernel)
    depth = np.where(filled, config.max_depth - inv, 0.0)
    return RangeImage(np.maximum(depth, 0.0), ri.config)
