"""Sparse 3D voxel and 2D pillar input tensors, plus the full scan-to-tensor pipeline."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..geometry import GridGeometry, ProjectionConfig
from ..scene_io.formats import PointCloud
from ..sparse.tensor import SparseTensor
from .normals import PointNormals, back_assign_normals, compute_normals
from .projection import DilationConfig, dilate_depth, spherical_project
from .tsdf import TsdfSamples, compute_ftsdf

FEATURES_3D = ("nx", "ny", "nz", "ftsdf", "intensity", "occupancy")
FEATURES_2D = ("mean_h", "min_h", "max_h", "mean_i", "min_i", "max_i", "density")
DENSITY_SATURATION = 32


def _group(keys: np.ndarray):
    """Stable sort by key; returns (order, unique keys, segment starts)."""
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]]) if len(k) else np.zeros(0, np.int64)
    return order, k[starts], starts


def _segment_mean(values: np.ndarray, starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    # reduceat sums left to right in sorted order, so the result is order-stable
    return np.add.reduceat(values, starts, axis=0) / counts.reshape((-1,) + (1,) * (values.ndim - 1))


def build_sparse_3d(pc: PointCloud, normals: PointNormals | None, tsdf: TsdfSamples | None,
                    geometry: GridGeometry = GridGeometry(), use_intensity: bool = True):
    """Voxel features [normal x3, fTSDF, mean intensity, occupancy].

    Points outside the grid are dropped. Returns (tensor, number dropped).
    """
    dims = np.asarray(geometry.dims)
    ijk = geometry.to_voxel(pc.xyz)
    inside = geometry.contains(ijk)
    dropped = int((~inside).sum())
    ijk = ijk[inside]
    if normals is None:
        nrm = np.zeros((len(pc), 3))
    else:
        nrm = np.where(normals.valid[:, None], normals.normals, 0.0)
    nrm = nrm[inside]
    inten = pc.intensity[inside] if use_intensity else np.zeros(len(ijk))

    lin = (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]
    order, occ_keys, starts = _group(lin)
    counts = np.diff(np.r_[starts, len(lin)])
    occ_feats = np.zeros((len(occ_keys), 6))
    if len(occ_keys):
        occ_feats[:, 0:3] = _segment_mean(nrm[order], starts, counts)
        occ_feats[:, 4] = _segment_mean(inten[order], starts, counts)
        occ_feats[:, 5] = 1.0

    if tsdf is not None and len(tsdf):
        t = tsdf.coords
        tkeys = (t[:, 0] * dims[1] + t[:, 1]) * dims[2] + t[:, 2]
    else:
        tkeys, tsdf = np.zeros(0, np.int64), None
    keys = np.union1d(occ_keys, tkeys)
    feats = np.zeros((len(keys), 6))
    feats[np.searchsorted(keys, occ_keys)] = occ_feats
    if tsdf is not None:
        feats[np.searchsorted(keys, tkeys), 3] = tsdf.values
    coords = np.stack(np.unravel_index(keys, tuple(dims)), axis=1).astype(np.int64)
    return SparseTensor.from_arrays(coords.reshape(-1, 3), feats), dropped


def build_sparse_2d(pc: PointCloud, geometry: GridGeometry = GridGeometry()):
    """One pillar per occupied BEV cell with 7 normalized statistics.

    Only points inside the 3D extent count. Returns (tensor, number dropped).
    """
    ijk = geometry.to_voxel(pc.xyz)
    inside = geometry.contains(ijk)
    dropped = int((~inside).sum())
    ij = ijk[inside, :2]
    z0, zext = geometry.origin[2], geometry.voxel_size[2] * geometry.dims[2]
    h = (pc.xyz[inside, 2] - z0) / zext
    h = np.clip(h, 0.0, 1.0)
    inten = pc.intensity[inside]
    lin = ij[:, 0] * geometry.dims[1] + ij[:, 1]
    order, keys, starts = _group(lin)
    counts = np.diff(np.r_[starts, len(lin)])
    feats = np.zeros((len(keys), 7))
    if len(keys):
        hs, it = h[order], inten[order]
        feats[:, 0] = _segment_mean(hs, starts, counts)
        feats[:, 1] = np.minimum.reduceat(hs, starts)
        feats[:, 2] = np.maximum.reduceat(hs, starts)
        feats[:, 3] = _segment_mean(it, starts, counts)
        feats[:, 4] = np.minimum.reduceat(it, starts)
        feats[:, 5] = np.maximum.reduceat(it, starts)
        feats[:, 6] = np.minimum(counts, DENSITY_SATURATION) / DENSITY_SATURATION
        # a mean can drift past min/max by one ulp when all members are equal
        feats[:, 0] = np.clip(feats[:, 0], feats[:, 1], feats[:, 2])
        feats[:, 3] = np.clip(feats[:, 3], feats[:, 4], feats[:, 5])
    coords = np.stack(np.unravel_index(keys, geometry.bev()), axis=1).astype(np.int64)
    return SparseTensor.from_arrays(coords.reshape(-1, 2), feats), dropped


@dataclass(frozen=True)
class FeatureConfig:
    geometry: GridGeometry = field(default_factory=GridGeometry)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    dilation: DilationConfig = field(default_factory=DilationConfig)
    tau: float = 0.6
    use_intensity: bool = True


@dataclass(frozen=True, eq=False)
class ScanFeatures:
    x3d: SparseTensor
    x2d: SparseTensor
    range_image: np.ndarray  # dilated depth (H, W)
    normals: np.ndarray  # (H, W, 3)
    dropped_fov: int
    dropped_extent: int


def extract_features(pc: PointCloud, config: FeatureConfig = FeatureConfig()) -> ScanFeatures:
    """Scan to sparse inputs: project, complete depth, normals, fTSDF, voxelize."""
    proj = spherical_project(pc.xyz, config.projection)
    smooth = dilate_depth(proj.image, config.dilation)
    nm = compute_normals(smooth)
    pn = back_assign_normals(nm, proj)
    tsdf = compute_ftsdf(smooth, config.geometry, config.tau)
    x3d, drop3 = build_sparse_3d(pc, pn, tsdf, config.geometry, config.use_intensity)
    x2d, _ = build_sparse_2d(pc, config.geometry)
    return ScanFeatures(x3d, x2d, smooth.depth, nm.normals, proj.dropped, drop3)


# ------------------------------------------------------------- debug dumps

DUMP_MAGIC = b"SSCD"


def write_image_dump(path, image: np.ndarray) -> None:
    """Little-endian float32 grid behind a 16-byte header (magic, H, W, C)."""
    a = np.asarray(image)
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", DUMP_MAGIC, h, w, c))
        f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_image_dump(path) -> np.ndarray:
    blob = open(path, "rb").read()
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated header")
    magic, h, w, c = struct.unpack_from("<4sIII", blob)
    if magic != DUMP_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if len(blob) != 16 + 4 * h * w * c:
        raise ValueError(f"{path}: expected {16 + 4 * h * w * c} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, c).copy()
