"""Deterministic synthetic scenes: labelled primitives plus a simulated scan.

The scanner fires one ray through every pixel centre of a
:class:`~sparsessc.geometry.ProjectionConfig` image from the origin and keeps the
nearest hit, so occluded surfaces produce no returns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..errors import SpecError
from ..geometry import GridGeometry, ProjectionConfig
from .classes import CLASS_IDS
from .formats import DenseLabelGrid, PointCloud


@dataclass(frozen=True)
class Plane:
    """Horizontal surface at height ``z`` spanning the grid's x-y extent."""

    z: float
    label: int


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int


@dataclass(frozen=True)
class Pole:
    x: float
    y: float
    radius: float
    z_lo: float
    z_hi: float
    label: int


Primitive = Union[Plane, Box, Pole]


@dataclass(frozen=True)
class SceneSpec:
    """Primitives are rasterised in order; later ones overwrite earlier ones."""

    primitives: tuple
    geometry: GridGeometry = field(default_factory=GridGeometry)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    max_range: float = 80.0
    intensity_noise: float = 0.02
    range_noise: float = 0.0


def _check(spec: SceneSpec):
    g = spec.geometry
    lo, hi = np.asarray(g.origin), g.upper
    for prim in spec.primitives:
        if isinstance(prim, Plane):
            ok = lo[2] <= prim.z < hi[2]
        elif isinstance(prim, Box):
            a, b = np.asarray(prim.lo), np.asarray(prim.hi)
            ok = bool(np.all(a < b) and np.all(a >= lo - 1e-9) and np.all(b <= hi + 1e-9))
        elif isinstance(prim, Pole):
            ok = (prim.radius > 0 and prim.z_lo < prim.z_hi
                  and lo[0] <= prim.x - prim.radius and prim.x + prim.radius <= hi[0]
                  and lo[1] <= prim.y - prim.radius and prim.y + prim.radius <= hi[1]
                  and lo[2] <= prim.z_lo and prim.z_hi <= hi[2])
        else:
            raise SpecError(f"unknown primitive {prim!r}")
        if not ok:
            raise SpecError(f"primitive outside the grid extent: {prim!r}")
        if not 0 < prim.label < 20:
            raise SpecError(f"primitive class {prim.label} not in 1..19")


def rasterize(spec: SceneSpec) -> DenseLabelGrid:
    _check(spec)
    g = spec.geometry
    labels = np.zeros(g.dims, dtype=np.uint8)
    vs = np.asarray(g.voxel_size)
    axes = [g.origin[a] + (np.arange(g.dims[a]) + 0.5) * vs[a] for a in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    for prim in spec.primitives:
        if isinstance(prim, Plane):
            k = int(g.to_voxel(np.array([[g.origin[0], g.origin[1], prim.z]]))[0, 2])
            labels[:, :, k] = prim.label
        elif isinstance(prim, Box):
            inside = ((X >= prim.lo[0]) & (X <= prim.hi[0]) & (Y >= prim.lo[1]) & (Y <= prim.hi[1])
                      & (Z >= prim.lo[2]) & (Z <= prim.hi[2]))
            labels[inside] = prim.label
        else:
            inside = (((X - prim.x) ** 2 + (Y - prim.y) ** 2 <= prim.radius ** 2)
                      & (Z >= prim.z_lo) & (Z <= prim.z_hi))
            labels[inside] = prim.label
    return DenseLabelGrid(labels, np.zeros(g.dims, dtype=bool), g)


# ------------------------------------------------------------- ray casting

def _hit_plane(d, prim: Plane, g: GridGeometry):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = prim.z / d[:, 2]
    t = np.where((d[:, 2] != 0) & (t > 0), t, np.inf)
    p = d * np.where(np.isfinite(t), t, 0.0)[:, None]
    lo, hi = np.asarray(g.origin), g.upper
    inside = (p[:, 0] >= lo[0]) & (p[:, 0] < hi[0]) & (p[:, 1] >= lo[1]) & (p[:, 1] < hi[1])
    return np.where(inside, t, np.inf)


def ray_box(d: np.ndarray, lo, hi, origin=None):
    """Entry distance of rays ``origin + t * d`` into an axis-aligned box (inf on miss)."""
    o = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (np.asarray(lo) - o) * inv
        t2 = (np.asarray(hi) - o) * inv
    tmin = np.nan_to_num(np.minimum(t1, t2), nan=-np.inf)
    tmax = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    return np.where((near <= far) & (near > 0), near, np.inf)


def _hit_pole(d, prim: Pole):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = -2 * (d[:, 0] * prim.x + d[:, 1] * prim.y)
    c = prim.x ** 2 + prim.y ** 2 - prim.radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a)
    z = d[:, 2] * t
    side = np.where((disc >= 0) & (a > 0) & (t > 0) & (z >= prim.z_lo) & (z <= prim.z_hi), t, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = prim.z_hi / d[:, 2]
    pc = d * np.where(np.isfinite(tc), tc, 0.0)[:, None]
    on_cap = (tc > 0) & ((pc[:, 0] - prim.x) ** 2 + (pc[:, 1] - prim.y) ** 2 <= prim.radius ** 2)
    cap = np.where(on_cap, tc, np.inf)
    return np.minimum(side, cap)


def cast(spec: SceneSpec, directions: np.ndarray):
    """Nearest hit distance and primitive index for each ray (index -1 on miss)."""
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(d), np.inf)
    which = np.full(len(d), -1, dtype=np.int64)
    for k, prim in enumerate(spec.primitives):
        if isinstance(prim, Plane):
            t = _hit_plane(d, prim, spec.geometry)
        elif isinstance(prim, Box):
            t = ray_box(d, prim.lo, prim.hi)
        else:
            t = _hit_pole(d, prim)
        closer = t < best
        best = np.where(closer, t, best)
        which = np.where(closer, k, which)
    which[best > spec.max_range] = -1
    return best, which


def base_intensity(label: int) -> float:
    return 0.15 + 0.7 * ((label * 7) % 19) / 18.0


def simulate_scan(spec: SceneSpec, seed: int = 0) -> PointCloud:
    _check(spec)
    rng = np.random.default_rng(seed)
    dirs = spec.projection.pixel_directions().reshape(-1, 3)
    t, which = cast(spec, dirs)
    hit = which >= 0
    t, which, dirs = t[hit], which[hit], dirs[hit]
    if spec.range_noise > 0:
        t = t + rng.normal(0.0, spec.range_noise, size=len(t))
    xyz = dirs * t[:, None]
    labels = np.array([spec.primitives[k].label for k in which], dtype=np.int64)
    inten = np.array([base_intensity(int(c)) for c in labels]) if len(labels) else np.zeros(0)
    if spec.intensity_noise > 0:
        inten = inten + rng.normal(0.0, spec.intensity_noise, size=len(inten))
    return PointCloud(np.column_stack([xyz, np.clip(inten, 0.0, 1.0)]))


def generate_synthetic_scene(spec: SceneSpec, seed: int = 0):
    """(simulated scan, exact label raster) for a primitive scene description."""
    grid = rasterize(spec)
    return simulate_scan(spec, seed), grid


def random_scene_spec(seed: int, geometry: GridGeometry | None = None,
                      projection: ProjectionConfig | None = None) -> SceneSpec:
    """A small street-like scene aligned to the voxel lattice.

    Ground is road with a sidewalk strip; a few cars, a building wall and poles
    stand on it.
    """
    g = geometry or GridGeometry.desk()
    rng = np.random.default_rng(seed)
    vs = g.voxel_size[0]
    lo, hi = np.asarray(g.origin), g.upper
    ground_z = lo[2] + 2 * vs + 1e-3
    snap = lambda v: float(np.round(v / vs) * vs)  # noqa: E731
    prims: list = [Plane(ground_z, CLASS_IDS["road"])]
    side_y = snap(hi[1] - rng.integers(8, 14) * vs)
    prims.append(Box((lo[0], side_y, ground_z - vs), (hi[0], hi[1], ground_z + vs / 2),
                     CLASS_IDS["sidewalk"]))
    wall_x0 = snap(lo[0] + rng.uniform(0.35, 0.6) * (hi[0] - lo[0]))
    prims.append(Box((wall_x0, side_y + 2 * vs, ground_z),
                     (min(wall_x0 + rng.integers(10, 20) * vs, hi[0]), hi[1], ground_z + 2.0),
                     CLASS_IDS["building"]))
    for _ in range(int(rng.integers(1, 3))):
        x0 = snap(lo[0] + rng.uniform(0.3, 0.75) * (hi[0] - lo[0]))
        y0 = snap(lo[1] + rng.uniform(0.1, 0.45) * (hi[1] - lo[1]))
        prims.append(Box((x0, y0, ground_z), (min(x0 + 4.0, hi[0]), y0 + 1.8, ground_z + 1.4),
                         CLASS_IDS["car"]))
    for _ in range(int(rng.integers(1, 3))):
        px = snap(lo[0] + rng.uniform(0.3, 0.9) * (hi[0] - lo[0])) + vs / 2
        prims.append(Pole(px, side_y + vs / 2 + vs, 0.15, ground_z, min(ground_z + 2.5, hi[2]),
                          CLASS_IDS["pole"]))
    return SceneSpec(tuple(prims), g, projection or ProjectionConfig())
