"""Random cropping, dropout, translation and rotation of point clouds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import PointCloud


@dataclass(frozen=True)
class AugmentationParams:
    crop_fraction: float = 0.0
    dropout_prob: float = 0.0
    translation_range: float = 0.1
    rotation_deg_3d: float = 10.0
    rotation_deg_2d: float = 45.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.crop_fraction <= 1.0 or not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("crop_fraction and dropout_prob must lie in [0, 1]")
        if min(self.translation_range, self.rotation_deg_3d, self.rotation_deg_2d) < 0:
            raise ValueError("augmentation ranges must be nonnegative")

    @classmethod
    def none(cls, seed: int = 0) -> "AugmentationParams":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass(frozen=True, eq=False)
class AppliedTransform:
    """What ``augment`` did, so labels can follow.

    ``matrix`` is the 4x4 rigid transform applied to surviving points; ``keep``
    marks which input points survived cropping and dropout; ``crop_box`` is the
    (xmin, ymin, xmax, ymax) window in the input frame, or None.
    """

    matrix: np.ndarray
    keep: np.ndarray
    crop_box: tuple | None = None

    def apply_points(self, xyz: np.ndarray) -> np.ndarray:
        return apply_rigid(self.matrix, xyz)


def euler_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation R = Rz(yaw) Ry(pitch) Rx(roll), angles in radians."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def rigid_matrix(rotation: np.ndarray, translation) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def apply_rigid(matrix: np.ndarray, xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if np.array_equal(matrix, np.eye(4)):
        return xyz.copy()
    return xyz @ matrix[:3, :3].T + matrix[:3, 3]


def apply_transform(pc: PointCloud, transform: AppliedTransform) -> PointCloud:
    pts = pc.points[transform.keep]
    xyz = transform.apply_points(pts[:, :3])
    return PointCloud(np.column_stack([xyz, pts[:, 3]]))


def sample_transform(params: AugmentationParams, mode: str, n_points: int,
                     xyz: np.ndarray | None = None) -> AppliedTransform:
    if mode not in ("2D", "3D"):
        raise ValueError(f"mode must be '2D' or '3D', got {mode!r}")
    rng = np.random.default_rng(params.seed)
    keep = np.ones(n_points, dtype=bool)
    crop_box = None
    if params.crop_fraction > 0 and n_points:
        lo, hi = xyz[:, :2].min(axis=0), xyz[:, :2].max(axis=0)
        size = (hi - lo) * (1.0 - params.crop_fraction)
        start = lo + rng.uniform(0.0, 1.0, size=2) * (hi - lo - size)
        crop_box = (float(start[0]), float(start[1]), float(start[0] + size[0]), float(start[1] + size[1]))
        keep &= np.all((xyz[:, :2] >= start) & (xyz[:, :2] <= start + size), axis=1)
    if params.dropout_prob > 0:
        keep &= rng.random(n_points) >= params.dropout_prob
    t = rng.uniform(-params.translation_range, params.translation_range, size=3)
    if mode == "2D":
        yaw = np.radians(rng.uniform(-params.rotation_deg_2d, params.rotation_deg_2d))
        angles = (0.0, 0.0, yaw)
    else:
        angles = np.zeros(3)
        pair = rng.choice(3, size=2, replace=False)
        lim = params.rotation_deg_3d
        angles[pair] = np.radians(rng.uniform(-lim, lim, size=2))
    m = rigid_matrix(euler_matrix(*angles), t)
    if not m[:3, 3].any() and not any(angles):
        m = np.eye(4)
    return AppliedTransform(m, keep, crop_box)


def augment(pc: PointCloud, params: AugmentationParams, mode: str = "3D"):
    """Returns (augmented cloud, transform applied). The seed fixes every draw."""
    tf = sample_transform(params, mode, len(pc), pc.xyz)
    return apply_transform(pc, tf), tf


def transform_label_grid(labels: np.ndarray, invalid: np.ndarray, geometry, matrix: np.ndarray):
    """Resample a label grid into the augmented frame (nearest voxel).

    Every output voxel centre is mapped back through the inverse transform;
    centres landing outside the source grid become empty and invalid.
    """
    if np.array_equal(matrix, np.eye(4)):
        return labels.copy(), invalid.copy()
    dims = tuple(geometry.dims)
    ijk = np.stack(np.unravel_index(np.arange(int(np.prod(dims))), dims), axis=1)
    centres = geometry.centers(ijk)
    inv = np.linalg.inv(matrix)
    src = geometry.to_voxel(apply_rigid(inv, centres))
    ok = geometry.contains(src)
    out_l = np.zeros(len(ijk), dtype=labels.dtype)
    out_i = np.ones(len(ijk), dtype=bool)
    s = src[ok]
    out_l[ok] = labels[tuple(s.T)]
    out_i[ok] = invalid[tuple(s.T)]
    return out_l.reshape(dims), out_i.reshape(dims)
