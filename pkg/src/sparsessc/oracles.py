"""Slow, literal reference implementations used by the test suite and ``selfcheck``.

Each oracle avoids the vectorized code path it checks.
"""
from __future__ import annotations

import math

import numpy as np

from .sparse.autograd import Tape, Var


# ------------------------------------------------------------------ fusion

def mvf_oracle(pred3d: np.ndarray, pred2d: np.ndarray, n: int = 3) -> np.ndarray:
    """Pixel-by-pixel lifting with explicit loops, repeated until nothing changes."""
    cur = np.array(pred3d, copy=True)
    X, Y, Z = cur.shape
    r = n // 2
    while True:
        src = cur.copy()
        out = src.copy()
        for c in range(1, 20):
            counts = [0] * Z
            for i in range(X):
                for j in range(Y):
                    for z in range(Z):
                        if src[i, j, z] == c:
                            counts[z] += 1
            if max(counts) == 0:
                continue
            z_star = counts.index(max(counts))
            for i in range(X):
                for j in range(Y):
                    if pred2d[i, j] != c:
                        continue
                    if any(src[i, j, z] == c for z in range(Z)):
                        continue
                    for z in range(z_star, Z):
                        if src[i, j, z] != 0:
                            continue
                        seen = False
                        for a in range(max(0, i - r), min(X, i + r + 1)):
                            for b in range(max(0, j - r), min(Y, j + r + 1)):
                                if src[a, b, z] == c:
                                    seen = True
                        if seen:
                            out[i, j, z] = c
                            break
        if np.array_equal(out, cur):
            return out
        cur = out


# ----------------------------------------------------------------- metrics

def count_confusion(pred, gt, invalid=None, num_classes: int = 20):
    """Dictionary-based counting of (gt, pred) pairs."""
    pred = np.asarray(pred).ravel().tolist()
    gt = np.asarray(gt).ravel().tolist()
    inv = [False] * len(pred) if invalid is None else np.asarray(invalid).ravel().tolist()
    counts = {}
    for p, g, bad in zip(pred, gt, inv):
        if bad:
            continue
        counts[(g, p)] = counts.get((g, p), 0) + 1
    return counts


def iou_oracle(pred, gt, invalid=None, num_classes: int = 20):
    """(per-class IoU dict over present classes 1..C-1, mean, completion IoU)."""
    counts = count_confusion(pred, gt, invalid, num_classes)
    per = {}
    for c in range(1, num_classes):
        tp = counts.get((c, c), 0)
        fp = sum(v for (g, p), v in counts.items() if p == c and g != c)
        fn = sum(v for (g, p), v in counts.items() if g == c and p != c)
        if tp + fp + fn:
            per[c] = tp / (tp + fp + fn)
    mean = math.fsum(per.values()) / len(per) if per else 1.0
    inter = sum(v for (g, p), v in counts.items() if g > 0 and p > 0)
    union = sum(v for (g, p), v in counts.items() if g > 0 or p > 0)
    return per, mean, (inter / union if union else 1.0)


# ------------------------------------------------------------------ pooling

def max_pool_oracle(occ: np.ndarray, factor: int) -> np.ndarray:
    shape = tuple(-(-s // factor) for s in occ.shape)
    out = np.zeros(shape, dtype=bool)
    for idx in zip(*np.nonzero(occ)):
        out[tuple(i // factor for i in idx)] = True
    return out


# -------------------------------------------------------------- propagation

def spn_oracle(coords: np.ndarray, feats: np.ndarray, affinity: np.ndarray, iterations: int):
    """Dictionary-driven propagation; ``affinity`` columns follow 3-kernel offset order."""
    d = coords.shape[1]
    offsets = [np.array(o) - 1 for o in np.ndindex(*([3] * d))]
    where = {tuple(c): i for i, c in enumerate(coords.tolist())}
    y = np.array(feats, dtype=np.float64)
    for _ in range(iterations):
        new = np.zeros_like(y)
        for i, c in enumerate(coords):
            total = y[i] * (1.0 - affinity[i].sum())
            for k, o in enumerate(offsets):
                j = where.get(tuple((c + o).tolist()))
                if j is not None:
                    total = total + affinity[i, k] * y[j]
            new[i] = total
        y = new
    return y


# ----------------------------------------------------- finite differences

def directional_check(fn, inputs: list[Var], rng: np.random.Generator, h: float = 1e-5,
                      detail: bool = False):
    """Compare tape gradients of ``fn`` with a central difference along a random unit direction.

    ``fn`` maps the inputs to a scalar Var. Returns (analytic, numeric, relative error);
    with ``detail`` also the bend |f(+h) - 2 f(0) + f(-h)| / |f(+h) - f(-h)|, which is
    about the error a kink inside [-h, h] causes and ~1e-5 for smooth functions.
    """
    dirs = [rng.standard_normal(v.data.shape) for v in inputs]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]  # unit direction: the step is h in input space
    with Tape() as tape:
        out = fn(*inputs)
    grads = tape.gradient(out, inputs)
    analytic = float(sum((g * d).sum() for g, d in zip(grads, dirs)))
    f0 = float(out.data)
    base = [v.data.copy() for v in inputs]

    def at(sign):
        for v, b, d in zip(inputs, base, dirs):
            v.data = b + sign * h * d
        return float(fn(*inputs).data)

    try:
        fp, fm = at(+1), at(-1)
    finally:
        for v, b in zip(inputs, base):
            v.data = b
    numeric = (fp - fm) / (2 * h)
    scale = max(abs(analytic), abs(numeric), 1e-8)
    err = abs(analytic - numeric) / scale
    if not detail:
        return analytic, numeric, err
    bend = abs(fp - 2 * f0 + fm) / max(abs(fp - fm), 1e-300)
    return analytic, numeric, err, bend


class StructureChanged(RuntimeError):
    """The perturbed function selected a different sparsity pattern."""


def gradient_trials(make_case, n: int, rng: np.random.Generator, tol: float,
                    h: float = 1e-5, max_skips: int | None = None):
    """Run ``n`` accepted finite-difference instances.

    ``make_case(rng)`` returns (fn, inputs). An instance is skipped and redrawn when
    the perturbation crosses a kink (relu, abs, max, clamp) or changes the pruned
    structure: it fails the tolerance and its bend accounts for at least half the
    error. Returns (worst relative error, number skipped).
    """
    max_skips = n if max_skips is None else max_skips
    worst, skipped, done = 0.0, 0, 0
    while done < n:
        fn, inputs = make_case(rng)
        try:
            _, _, err, bend = directional_check(fn, inputs, rng, h, detail=True)
        except StructureChanged:
            err, bend = np.inf, np.inf
        if err > tol and bend >= 0.5 * err:
            skipped += 1
            if skipped > max_skips:
                raise RuntimeError(f"{skipped} instances hit kinks; gradients cannot be checked")
            continue
        worst = max(worst, err)
        done += 1
    return worst, skipped


# ------------------------------------------------------------------ normals

def plane_fit_normals(points: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane through each valid pixel's 3x3 neighbourhood.

    Returns (normals facing the sensor, mask of pixels with a full valid window).
    The azimuth axis wraps.
    """
    h, w, _ = points.shape
    out = np.zeros((h, w, 3))
    ok = np.zeros((h, w), dtype=bool)
    for r in range(1, h - 1):
        for c in range(w):
            cols = [(c - 1) % w, c, (c + 1) % w]
            win = valid[r - 1:r + 2][:, cols]
            if not win.all():
                continue
            p = points[r - 1:r + 2][:, cols].reshape(-1, 3)
            _, _, vt = np.linalg.svd(p - p.mean(axis=0))
            n = vt[-1]
            if n @ points[r, c] > 0:
                n = -n
            out[r, c] = n
            ok[r, c] = True
    return out, ok


def bisect_scan(cfg, inside, t_max: float = 40.0, iterations: int = 60) -> np.ndarray:
    """Points where each pixel ray of ``cfg`` first enters ``inside(p) < 0``.

    Rays that are still outside at ``t_max`` return nothing. The surface must
    be crossed at most once along each ray for the bisection to be exact.
    """
    d = cfg.pixel_directions()
    lo, hi = np.zeros(d.shape[:2]), np.full(d.shape[:2], t_max)
    hit = inside(d * hi[..., None]) < 0
    for _ in range(iterations):
        mid = (lo + hi) / 2
        below = inside(d * mid[..., None]) < 0
        hi, lo = np.where(below, mid, hi), np.where(below, lo, mid)
    return (d * hi[..., None])[hit]


def smooth_surface(seed: int):
    """Random gentle heightfield (even seeds) or wavy wall (odd seeds) as an implicit function.

    Slopes stay below every ray's grazing angle, so nothing self-occludes.
    """
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.05, 0.2), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)
    p0, p1 = rng.uniform(0, 2 * np.pi, 2)
    if seed % 2:
        return lambda p: 8.0 + a * np.sin(b * p[..., 1] + p0) * np.cos(c * p[..., 2] + p1) - p[..., 0]
    return lambda p: p[..., 2] + 1.7 - a * np.sin(b * p[..., 0] + p0) * np.cos(c * p[..., 1] + p1)
