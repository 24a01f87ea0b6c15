"""Output-coordinate generation and kernel maps for generalized sparse convolution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import CoordSet, kernel_offsets, lexsorted_unique

MODES = ("same", "strided", "transposed")


@dataclass(frozen=True)
class KernelMap:
    """For each kernel offset, the (input row, output row) pairs it connects.

    ``offsets`` are in absolute (stride-1) coordinate units. For a forward map,
    output ``u`` reads input ``u + offsets[k]``.
    """

    offsets: np.ndarray
    in_rows: tuple[np.ndarray, ...]
    out_rows: tuple[np.ndarray, ...]
    n_in: int
    n_out: int

    def __len__(self):
        return len(self.offsets)

    @property
    def num_pairs(self) -> int:
        return int(np.sum([len(r) for r in self.in_rows]))

    def pairs(self):
        """Yield (offset index, input row, output row) triples; slow, for tests."""
        for k, (i, o) in enumerate(zip(self.in_rows, self.out_rows)):
            for a, b in zip(i.tolist(), o.tolist()):
                yield k, a, b


def _cap_mask(coords: np.ndarray, cap) -> np.ndarray:
    if cap is None:
        return np.ones(len(coords), dtype=bool)
    cap = np.asarray(cap, dtype=np.int64)
    return np.all((coords >= 0) & (coords < cap), axis=1)


def build_output_coords(x: CoordSet, mode: str = "same", kernel_size: int = 3,
                        stride: int = 1, dilation: int = 1, cap=None) -> CoordSet:
    """Coordinate set produced by a convolution layer applied to ``x``.

    same: the input set itself (submanifold). strided: input coordinates floor-
    quantized to ``stride`` times the input stride. transposed: every input
    coordinate shifted by every kernel offset at the output stride, clipped to
    ``[0, cap)`` when a cap is given.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "same":
        return x
    key = ("out", mode, kernel_size, stride, dilation, None if cap is None else tuple(cap))
    cached = x.kmap_cache.get(key)
    if cached is not None:
        return cached
    d = x.dim
    s_in = np.asarray(x.stride, dtype=np.int64)
    if mode == "strided":
        s_out = s_in * stride
        q = np.floor_divide(x.coords, s_out) * s_out
        out = CoordSet(lexsorted_unique(q), tuple(s_out), check=False)
    else:
        if np.any(s_in % stride):
            raise ValueError(f"stride {tuple(s_in)} not divisible by upsample factor {stride}")
        s_out = s_in // stride
        offs = kernel_offsets(kernel_size, d) * dilation * s_out
        gen = (x.coords[:, None, :] + offs[None, :, :]).reshape(-1, d)
        gen = gen[_cap_mask(gen, cap)]
        out = CoordSet(lexsorted_unique(gen), tuple(s_out), check=False)
    x.kmap_cache[key] = out
    return out


def map_offsets(in_set: CoordSet, out_set: CoordSet, kernel_size: int,
                dilation: int = 1, transposed: bool = False) -> np.ndarray:
    base = kernel_offsets(kernel_size, in_set.dim) * dilation
    if transposed:
        return -base * np.asarray(out_set.stride, dtype=np.int64)
    return base * np.asarray(in_set.stride, dtype=np.int64)


def build_kernel_map(in_set: CoordSet, out_set: CoordSet, kernel_size: int,
                     dilation: int = 1, transposed: bool = False) -> KernelMap:
    """Pairs (row of u+i in input, row of u in output) for every offset i.

    A pair exists exactly when ``u + i`` is an input coordinate. Offsets scale
    with the input stride, or for transposed maps with the output stride and
    opposite sign, so that input ``c`` feeds output ``c + j * stride_out``.
    """
    same = out_set is in_set
    key = ("kmap", "self" if same else id(out_set), kernel_size, dilation, transposed)
    cached = in_set.kmap_cache.get(key)
    if cached is not None and (same or cached[0] is out_set):
        return cached[1]
    offsets = map_offsets(in_set, out_set, kernel_size, dilation, transposed)
    in_rows, out_rows = [], []
    out_coords = out_set.coords
    for off in offsets:
        rows = in_set.index.lookup(out_coords + off)
        hit = np.flatnonzero(rows >= 0)
        in_rows.append(rows[hit])
        out_rows.append(hit)
    kmap = KernelMap(offsets, tuple(in_rows), tuple(out_rows), len(in_set), len(out_set))
    # the stored reference keeps id(out_set) from being recycled
    in_set.kmap_cache[key] = (None if same else out_set, kmap)
    return kmap
