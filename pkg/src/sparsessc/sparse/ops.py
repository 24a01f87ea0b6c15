"""Differentiable operations on sparse tensors."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Var, record
from .kernel_map import KernelMap, build_kernel_map, build_output_coords
from .tensor import AlignmentError, CoordSet, SparseTensor


class ShapeError(ValueError):
    """Feature or weight widths disagree."""


# -------------------------------------------------------------- convolution

def sparse_conv_backward(kmap: KernelMap, x: np.ndarray, w: np.ndarray, g: np.ndarray):
    """Adjoints of the gather-multiply-scatter product.

    grad_x[in] += W_k^T g[out] and grad_W_k += x[in]^T g[out] over every pair.
    """
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for k, (i, o) in enumerate(zip(kmap.in_rows, kmap.out_rows)):
        if len(i) == 0:
            continue
        go = g[o]
        gx[i] += go @ w[k].T
        gw[k] = x[i].T @ go
    return gx, gw


def apply_kernel_map(feats: Var, weight: Var, kmap: KernelMap) -> Var:
    """out[u] = sum_k W_k x[u + offset_k] over pairs present in ``kmap``.

    Accumulation runs offset by offset; within one offset every output row
    appears at most once, so the summation order per row is fixed.
    """
    x, w = feats.data, weight.data
    if w.ndim != 3 or w.shape[0] != len(kmap):
        raise ShapeError(f"weight {w.shape} does not fit a {len(kmap)}-offset kernel")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input width {x.shape[1]} != weight input width {w.shape[1]}")
    out = np.zeros((kmap.n_out, w.shape[2]), dtype=np.result_type(x, w))
    for k, (i, o) in enumerate(zip(kmap.in_rows, kmap.out_rows)):
        if len(i):
            out[o] += x[i] @ w[k]
    return record(out, (feats, weight), lambda g: sparse_conv_backward(kmap, x, w, g))


def _add_bias(feats: Var, bias) -> Var:
    return feats if bias is None else ag.add(feats, bias)


def sparse_conv_forward(x: SparseTensor, weight: Var, kernel_size: int, stride: int = 1,
                        dilation: int = 1, bias: Var | None = None,
                        out_set: CoordSet | None = None) -> SparseTensor:
    """Generalized sparse convolution.

    With ``stride == 1`` and no explicit output set the output coordinates equal
    the input coordinates (submanifold). ``stride > 1`` downsamples.
    """
    if out_set is None:
        mode = "same" if stride == 1 else "strided"
        out_set = build_output_coords(x.cset, mode, kernel_size, stride, dilation)
    kmap = build_kernel_map(x.cset, out_set, kernel_size, dilation)
    return SparseTensor(out_set, _add_bias(apply_kernel_map(x.feats, weight, kmap), bias))


conv = sparse_conv_forward


def transposed_conv_forward(x: SparseTensor, weight: Var, kernel_size: int, stride: int = 1,
                            dilation: int = 1, bias: Var | None = None, cap=None) -> SparseTensor:
    """Generative transposed convolution: input c feeds every c + j * stride_out."""
    out_set = build_output_coords(x.cset, "transposed", kernel_size, stride, dilation, cap)
    kmap = build_kernel_map(x.cset, out_set, kernel_size, dilation, transposed=True)
    return SparseTensor(out_set, _add_bias(apply_kernel_map(x.feats, weight, kmap), bias))


conv_transpose = transposed_conv_forward


# ---------------------------------------------------------------- selection

def select_rows(x: SparseTensor, rows: np.ndarray) -> SparseTensor:
    rows = np.asarray(rows, dtype=np.int64)
    cset = CoordSet(x.coords[rows], x.stride, check=False)
    return SparseTensor(cset, ag.take_rows(x.feats, rows))


def prune(x: SparseTensor, keep_scores, threshold: float = 0.0, force_keep=None) -> SparseTensor:
    """Keep exactly the rows whose score exceeds ``threshold``.

    ``force_keep`` (boolean per row) additionally retains rows regardless of
    score. Gradients reach only the retained rows.
    """
    s = np.asarray(keep_scores.data if isinstance(keep_scores, Var) else keep_scores)
    s = s.reshape(len(x), -1)[:, 0] if len(x) else s.reshape(0)
    keep = s > threshold
    if force_keep is not None:
        keep |= np.asarray(force_keep, dtype=bool)
    if keep.all():
        return x
    return select_rows(x, np.flatnonzero(keep))


def lookup_rows(x: SparseTensor, coords: np.ndarray) -> np.ndarray:
    return x.index.lookup(coords)


# ------------------------------------------------------------- elementwise

def _require_aligned(x: SparseTensor, y: SparseTensor):
    if x.cset is y.cset:
        return
    if x.stride != y.stride or x.coords.shape != y.coords.shape or not np.array_equal(x.coords, y.coords):
        raise AlignmentError("operands must share an identical coordinate set")


def relu(x: SparseTensor) -> SparseTensor:
    return x.with_feats(ag.relu(x.feats))


def sigmoid(x: SparseTensor) -> SparseTensor:
    return x.with_feats(ag.sigmoid(x.feats))


def negate(x: SparseTensor) -> SparseTensor:
    return x.with_feats(ag.neg(x.feats))


def add(x: SparseTensor, y: SparseTensor) -> SparseTensor:
    _require_aligned(x, y)
    return x.with_feats(ag.add(x.feats, y.feats))


def concat_features(*tensors: SparseTensor) -> SparseTensor:
    for t in tensors[1:]:
        _require_aligned(tensors[0], t)
    return tensors[0].with_feats(ag.concat([t.feats for t in tensors], axis=1))


def add_matching(x: SparseTensor, other: SparseTensor) -> SparseTensor:
    """Add ``other``'s features wherever its coordinates coincide with ``x``'s."""
    if x.stride != other.stride:
        raise AlignmentError(f"stride {x.stride} != {other.stride}")
    rows = other.index.lookup(x.coords)
    return x.with_feats(ag.add(x.feats, ag.take_rows(other.feats, rows)))


def global_avg_pool(x: SparseTensor) -> Var:
    """Mean feature vector over all coordinates, shape (1, m)."""
    return ag.mean(x.feats, axis=0, keepdims=True)


def broadcast_mul(x: SparseTensor, v) -> SparseTensor:
    """Scale every coordinate's features channel-wise by ``v`` (shape (1, m) or (m,))."""
    v = ag.as_var(v)
    if v.ndim == 1:
        v = ag.reshape(v, (1, -1))
    if v.shape[1] != x.num_channels:
        raise ShapeError(f"vector width {v.shape[1]} != {x.num_channels} channels")
    return x.with_feats(ag.mul(x.feats, v))


def linear(x: SparseTensor, weight: Var, bias: Var | None = None) -> SparseTensor:
    return x.with_feats(_add_bias(ag.matmul(x.feats, weight), bias))


# ------------------------------------------------------------------ pooling

def max_pool(x: SparseTensor, kernel_size: int, dilation: int = 1) -> SparseTensor:
    """Channel-wise maximum over each coordinate's occupied neighbourhood.

    Output coordinates equal the input's. Ties go to the earliest offset.
    """
    n, m = x.feats.shape
    if n == 0:
        return x
    kmap = build_kernel_map(x.cset, x.cset, kernel_size, dilation)
    X = x.feats.data
    best = np.full((n, m), -np.inf, dtype=X.dtype)
    arg = np.zeros((n, m), dtype=np.int64)
    for i, o in zip(kmap.in_rows, kmap.out_rows):
        if len(i) == 0:
            continue
        cand = X[i]
        cur = best[o]
        upd = cand > cur
        best[o] = np.where(upd, cand, cur)
        arg[o] = np.where(upd, i[:, None], arg[o])
    flat = (arg * m + np.arange(m)[None, :]).ravel()

    def backward(g):
        gx = np.bincount(flat, weights=g.ravel(), minlength=n * m).reshape(n, m)
        return (gx.astype(X.dtype, copy=False),)

    return x.with_feats(record(best, (x.feats,), backward))


# -------------------------------------------------------------- normalization

def batch_norm(feats: Var, gamma: Var, beta: Var, eps: float = 1e-5,
               running: tuple[np.ndarray, np.ndarray] | None = None) -> Var:
    """Per-channel normalization.

    With ``running`` given, those (mean, var) statistics are used and the op is
    affine; otherwise statistics come from the rows of ``feats``.
    """
    x = feats.data
    n = len(x)
    if running is not None:
        mu, var = running
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = xhat * gamma.data + beta.data

        def backward(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

        return record(out, (feats, gamma, beta), backward)
    if n == 0:
        return record(x.copy(), (feats, gamma, beta),
                      lambda g: (g, np.zeros_like(gamma.data), np.zeros_like(beta.data)))
    mu = x.mean(axis=0)
    xc = x - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return record(out, (feats, gamma, beta), backward)


# ------------------------------------------------------------- propagation

def neighbor_mix(y: Var, affinity: Var, kmap: KernelMap) -> Var:
    """out[u] = sum_k a[u, k] * y[u + offset_k] over existing neighbours."""
    Y, A = y.data, affinity.data
    out = np.zeros_like(Y)
    for k, (i, o) in enumerate(zip(kmap.in_rows, kmap.out_rows)):
        if len(i):
            out[o] += A[o, k:k + 1] * Y[i]

    def backward(g):
        gy = np.zeros_like(Y)
        ga = np.zeros_like(A)
        for k, (i, o) in enumerate(zip(kmap.in_rows, kmap.out_rows)):
            if len(i):
                go = g[o]
                gy[i] += A[o, k:k + 1] * go
                ga[o, k] = np.einsum("ij,ij->i", go, Y[i])
        return gy, ga

    return record(out, (y, affinity), backward)
