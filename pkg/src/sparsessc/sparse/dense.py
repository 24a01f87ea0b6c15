"""Dense reference convolutions used as test oracles.

The sparse tensor is zero-filled into a dense grid and convolved with plain
shifted-slice arithmetic; nothing here touches kernel maps or coordinate hashing.
"""
from __future__ import annotations

import itertools

import numpy as np

MAX_CELLS = 32 ** 3


class ResourceError(RuntimeError):
    """Grid too large to materialize."""


def _offsets(kernel_size: int, dim: int) -> list[tuple[int, ...]]:
    if kernel_size % 2:
        half = kernel_size // 2
        axis = range(-half, half + 1)
    else:
        axis = range(kernel_size)
    return list(itertools.product(axis, repeat=dim))


def _shift(a: np.ndarray, offset) -> np.ndarray:
    """S[p] = a[p + offset] where in range, else 0 (spatial axes only)."""
    out = np.zeros_like(a)
    src, dst = [], []
    for o, n in zip(offset, a.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, max(n - o, 0)))
        else:
            src.append(slice(0, max(n + o, 0)))
            dst.append(slice(-o, n))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _frame(coords: np.ndarray, pad: int):
    lo = coords.min(axis=0) - pad
    hi = coords.max(axis=0) + pad
    shape = tuple(int(v) for v in hi - lo + 1)
    if int(np.prod(shape)) > MAX_CELLS:
        raise ResourceError(f"dense grid {shape} exceeds {MAX_CELLS} cells")
    return lo, shape


def zero_fill(coords: np.ndarray, feats: np.ndarray, lo, shape) -> np.ndarray:
    grid = np.zeros(tuple(shape) + (feats.shape[1],), dtype=np.float64)
    if len(coords):
        grid[tuple((coords - lo).T)] = feats
    return grid


def dense_oracle(coords, feats, stride, weight, kernel_size: int, mode: str = "same",
                 up: int = 1, dilation: int = 1, pad: int | None = None):
    """Dense convolution of a zero-filled sparse tensor.

    Returns ``(grid, lo)``: the output grid (spatial..., m_out) in stride-1 units
    and the coordinate of its first cell. ``mode`` is "same"/"strided" for a
    correlation reading inputs at ``p + i * stride * dilation``, or "transposed"
    for the adjoint that writes ``W_j x`` to ``p + j * (stride / up) * dilation``.
    """
    coords = np.asarray(coords, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    d = coords.shape[1]
    stride = np.broadcast_to(np.asarray(stride, dtype=np.int64), (d,))
    if mode == "transposed":
        step = stride // up
    else:
        step = stride
    offs = [np.asarray(o) * step * dilation for o in _offsets(kernel_size, d)]
    reach = int(max(np.abs(o).max() for o in offs))
    if pad is None:
        pad = reach if mode == "transposed" else reach + 2 * int(stride.max())
    if len(coords) == 0:
        shape = (1,) * d
        return np.zeros(shape + (weight.shape[2],)), np.zeros(d, dtype=np.int64)
    lo, shape = _frame(coords, pad)
    x = zero_fill(coords, feats, lo, shape)
    y = np.zeros(tuple(shape) + (weight.shape[2],))
    for k, off in enumerate(offs):
        if mode == "transposed":
            # y[p + off] += W_k x[p]
            y += _shift(np.tensordot(x, weight[k], axes=([d], [0])), -off)
        else:
            # y[p] += W_k x[p + off]
            y += np.tensordot(_shift(x, off), weight[k], axes=([d], [0]))
    return y, lo


def dense_values_at(grid: np.ndarray, lo, coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64)
    if len(coords) == 0:
        return np.zeros((0, grid.shape[-1]))
    return grid[tuple((coords - lo).T)]
