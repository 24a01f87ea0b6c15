"""Surface normals from range images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projection import Projection, RangeImage


@dataclass(frozen=True, eq=False)
class NormalMap:
    normals: np.ndarray  # (H, W, 3), unit length where valid, zero elsewhere
    valid: np.ndarray  # (H, W) bool


def _neighbor(a: np.ndarray, shift: int, axis: int, wrap: bool):
    """a[p + shift] along ``axis`` and a mask of where that neighbour exists."""
    n = a.shape[axis]
    if wrap:
        return np.roll(a, -shift, axis=axis), np.ones(a.shape[:2], dtype=bool)
    out = np.zeros_like(a)
    ok = np.zeros(a.shape[:2], dtype=bool)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if shift > 0:
        src[axis], dst[axis] = slice(shift, n), slice(0, n - shift)
    else:
        src[axis], dst[axis] = slice(0, n + shift), slice(-shift, n)
    out[tuple(dst)] = a[tuple(src)]
    ok[tuple(dst[:2])] = True
    return out, ok


def _tangent(points, valid, axis, wrap):
    """Central difference where both neighbours exist, else one-sided."""
    fwd, fwd_ok = _neighbor(points, 1, axis, wrap)
    bwd, bwd_ok = _neighbor(points, -1, axis, wrap)
    vf, _ = _neighbor(valid[..., None].astype(np.float64), 1, axis, wrap)
    vb, _ = _neighbor(valid[..., None].astype(np.float64), -1, axis, wrap)
    f = fwd_ok & (vf[..., 0] > 0)
    b = bwd_ok & (vb[..., 0] > 0)
    t = np.where((f & b)[..., None], fwd - bwd,
                 np.where(f[..., None], fwd - points, np.where(b[..., None], points - bwd, 0.0)))
    return t, f | b


def compute_normals(ri: RangeImage) -> NormalMap:
    """Cross product of row and column tangents of the unprojected image.

    Normals face the sensor; pixels with a degenerate cross product or without
    neighbours on both image axes are marked invalid.
    """
    valid = ri.valid
    pts = ri.unproject()
    wrap = abs(ri.config.fov_h - 360.0) < 1e-9
    t_row, ok_r = _tangent(pts, valid, 0, False)
    t_col, ok_c = _tangent(pts, valid, 1, wrap)
    n = np.cross(t_col, t_row)
    norm = np.linalg.norm(n, axis=-1)
    scale = np.maximum(np.abs(pts).max(axis=-1), 1.0)
    good = valid & ok_r & ok_c & (norm > 1e-12 * scale * scale)
    n = np.where(good[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    facing_away = np.einsum("hwc,hwc->hw", n, pts) > 0
    n = np.where(facing_away[..., None], -n, n)
    return NormalMap(n, good)


@dataclass(frozen=True, eq=False)
class PointNormals:
    """Per-point normals. ``assigned`` is False for points outside the image."""

    normals: np.ndarray
    valid: np.ndarray
    assigned: np.ndarray


def back_assign_normals(nm: NormalMap, proj: Projection) -> PointNormals:
    """Every projected point takes its pixel's normal (zero and invalid on empty pixels)."""
    n = len(proj.rows)
    assigned = proj.rows >= 0
    normals = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)
    r, c = proj.rows[assigned], proj.cols[assigned]
    normals[assigned] = nm.normals[r, c]
    valid[assigned] = nm.valid[r, c]
    normals[~valid] = 0.0
    return PointNormals(normals, valid, assigned)
