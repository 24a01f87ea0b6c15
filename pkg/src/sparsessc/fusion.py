"""Lifting bird's-eye-view predictions into empty voxels, and propagation-based refinement."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .network import NUM_CLASSES, SPNBlock, spn_propagate
from .sparse import ops
from .sparse.autograd import Var
from .sparse.tensor import SparseTensor


def dominant_layer(labels: np.ndarray, c: int) -> int | None:
    """z index with the most voxels of class ``c`` (lowest on ties); None if absent."""
    counts = (labels == c).sum(axis=(0, 1))
    if not counts.any():
        return None
    return int(np.argmax(counts))


def _lift_pass(src: np.ndarray, bev: np.ndarray, n: int) -> np.ndarray:
    out = src.copy()
    footprint = np.ones((n, n, 1), dtype=bool)
    for c in range(1, NUM_CLASSES):
        want = bev == c
        if not want.any():
            continue
        is_c = src == c
        z_star = dominant_layer(src, c)
        if z_star is None:
            continue
        near = ndimage.binary_dilation(is_c, structure=footprint)
        cand = near & (src == 0)
        cand[:, :, :z_star] = False
        cand &= (want & ~is_c.any(axis=2))[:, :, None]
        hit = cand.any(axis=2)
        first = np.argmax(cand, axis=2)
        i, j = np.nonzero(hit)
        out[i, j, first[i, j]] = c
    return out


def mvf_lift(pred3d: np.ndarray, pred2d: np.ndarray, n: int = 3, max_passes: int | None = None) -> np.ndarray:
    """Fill empty voxels from the BEV prediction, class by class in ascending ID order.

    For class c the scan for pixel (i, j) starts at the layer where c is most
    frequent and moves upward; the first empty voxel with c somewhere in its
    n x n in-layer neighbourhood takes label c. Columns that already contain c
    are left alone. Each pass reads a frozen copy of the grid; passes repeat
    until nothing changes, so the result is a fixed point.
    """
    labels = np.asarray(pred3d)
    bev = np.asarray(pred2d)
    if labels.ndim != 3 or bev.shape != labels.shape[:2]:
        raise ValueError(f"BEV shape {bev.shape} does not match grid {labels.shape}")
    if n < 1 or n % 2 == 0:
        raise ValueError("neighbourhood size must be odd and positive")
    cur = labels.copy()
    passes = 0
    while max_passes is None or passes < max_passes:
        nxt = _lift_pass(cur, bev, n)
        passes += 1
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    return cur


def one_hot_logits(labels: np.ndarray, confidence: float = 1.0) -> np.ndarray:
    out = np.zeros((len(labels), NUM_CLASSES))
    out[np.arange(len(labels)), labels] = confidence
    return out


def refine(labels: np.ndarray, spn: SPNBlock | None = None, guide: SparseTensor | None = None,
           affinity: np.ndarray | None = None, confidence: float = 1.0, iterations: int | None = None):
    """Propagate one-hot logits over the occupied voxels and re-take the argmax.

    Affinities come from ``spn`` (with ``guide`` features looked up per voxel,
    zero where missing) unless given directly. Occupancy never changes: the
    argmax runs over the non-empty classes only.
    """
    labels = np.asarray(labels)
    coords = np.argwhere(labels > 0).astype(np.int64)
    if len(coords) == 0:
        return labels.copy()
    lab = labels[tuple(coords.T)].astype(np.int64)
    x = SparseTensor.from_arrays(coords, one_hot_logits(lab, confidence))
    if affinity is None:
        if spn is None:
            raise ValueError("either an SPN block or explicit affinities are required")
        if guide is None:
            raise ValueError("an SPN block needs guide features")
        rows = ops.lookup_rows(guide, coords)
        g = np.zeros((len(coords), guide.num_channels))
        g[rows >= 0] = guide.feats.data[rows[rows >= 0]]
        gt = SparseTensor(x.cset, Var(g))
        aff = spn.affinity(x, gt)
        T = spn.iterations if iterations is None else iterations
    else:
        aff = Var(np.asarray(affinity, dtype=np.float64))
        T = 3 if iterations is None else iterations
    y = spn_propagate(x, aff, T).feats.data
    new = 1 + np.argmax(y[:, 1:], axis=1)
    out = labels.copy()
    out[tuple(coords.T)] = new.astype(labels.dtype)
    return out
