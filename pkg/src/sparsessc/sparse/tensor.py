"""Coordinate sets and sparse tensors."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .autograd import Var

_BITS = 20
_BIAS = 1 << (_BITS - 1)
_LIMIT = _BIAS - 1


class AlignmentError(ValueError):
    """Operands do not share a coordinate set."""


def _encode(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pack integer coordinates into int64 keys. Also returns an in-range mask."""
    coords = np.asarray(coords, dtype=np.int64)
    ok = np.all((coords >= -_LIMIT) & (coords <= _LIMIT), axis=1)
    shifted = np.where(ok[:, None], coords + _BIAS, 0)
    keys = np.zeros(len(coords), dtype=np.int64)
    for axis in range(coords.shape[1]):
        keys = (keys << _BITS) | shifted[:, axis]
    return keys, ok


class CoordIndex:
    """Maps coordinates to row numbers.

    Backed by sorted packed keys; ``lookup`` is a vectorised probe that returns -1
    for absent coordinates.
    """

    def __init__(self, coords: np.ndarray):
        keys, ok = _encode(coords)
        if not ok.all():
            raise ValueError(f"coordinates exceed +-{_LIMIT}")
        self._order = np.argsort(keys, kind="stable")
        self._keys = keys[self._order]
        self.size = len(keys)
        self.dim = coords.shape[1]

    def lookup(self, query: np.ndarray) -> np.ndarray:
        query = np.asarray(query, dtype=np.int64).reshape(-1, self.dim)
        if self.size == 0 or len(query) == 0:
            return np.full(len(query), -1, dtype=np.int64)
        keys, ok = _encode(query)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, self.size - 1)
        hit = ok & (self._keys[pos] == keys)
        return np.where(hit, self._order[pos], -1)

    def __getitem__(self, coord) -> int:
        row = int(self.lookup(np.asarray(coord)[None])[0])
        if row < 0:
            raise KeyError(tuple(coord))
        return row

    def __contains__(self, coord) -> bool:
        return int(self.lookup(np.asarray(coord)[None])[0]) >= 0

    def __len__(self):
        return self.size


def has_duplicates(coords: np.ndarray) -> bool:
    if len(coords) < 2:
        return False
    keys, _ = _encode(coords)
    return len(np.unique(keys)) != len(keys)


class CoordSet:
    """An immutable set of coordinates at a tensor stride.

    Tensors that share a CoordSet object share its index and kernel-map cache.
    """

    def __init__(self, coords, stride, check: bool = True):
        coords = np.ascontiguousarray(coords, dtype=np.int64)
        if coords.ndim != 2:
            raise ValueError("coords must be an (n, d) matrix")
        d = coords.shape[1]
        if np.isscalar(stride):
            stride = (int(stride),) * d
        stride = tuple(int(s) for s in stride)
        if len(stride) != d or min(stride, default=1) <= 0:
            raise ValueError(f"bad stride {stride} for d={d}")
        if check:
            if np.any(coords % np.asarray(stride, dtype=np.int64)):
                raise ValueError(f"coordinates not divisible by stride {stride}")
            if has_duplicates(coords):
                raise ValueError("duplicate coordinates")
        coords.setflags(write=False)
        self.coords = coords
        self.stride = stride
        self.kmap_cache: dict = {}

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return len(self.coords)

    @cached_property
    def index(self) -> CoordIndex:
        return CoordIndex(self.coords)

    @classmethod
    def empty(cls, d: int, stride=1) -> "CoordSet":
        return cls(np.zeros((0, d), dtype=np.int64), stride)


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Coordinates, a feature matrix and a tensor stride.

    ``feats`` is a :class:`Var` so that operations on it are differentiable.
    """

    cset: CoordSet
    feats: Var

    def __post_init__(self):
        if not isinstance(self.feats, Var):
            object.__setattr__(self, "feats", Var(self.feats))
        if self.feats.ndim != 2 or len(self.feats) != len(self.cset):
            raise ValueError(
                f"feature matrix {self.feats.shape} does not match {len(self.cset)} coordinates")

    @classmethod
    def from_arrays(cls, coords, feats, stride=1, requires_grad: bool = False) -> "SparseTensor":
        feats = np.asarray(feats)
        if feats.dtype.kind != "f":
            feats = feats.astype(np.float64)
        return cls(CoordSet(coords, stride), Var(feats, requires_grad=requires_grad))

    @property
    def coords(self) -> np.ndarray:
        return self.cset.coords

    @property
    def stride(self) -> tuple[int, ...]:
        return self.cset.stride

    @property
    def index(self) -> CoordIndex:
        return self.cset.index

    @property
    def dim(self) -> int:
        return self.cset.dim

    @property
    def num_channels(self) -> int:
        return self.feats.shape[1]

    def __len__(self):
        return len(self.cset)

    def with_feats(self, feats: Var) -> "SparseTensor":
        return SparseTensor(self.cset, feats)

    def dense(self, shape: Sequence[int] | None = None) -> np.ndarray:
        """Zero-filled dense array (spatial dims..., channels) in stride-1 units."""
        c = self.coords
        if shape is None:
            shape = tuple(int(v) + 1 for v in c.max(axis=0)) if len(c) else (0,) * self.dim
        out = np.zeros(tuple(shape) + (self.num_channels,), dtype=self.feats.dtype)
        if len(c):
            out[tuple(c.T)] = self.feats.data
        return out

    def sorted(self) -> "SparseTensor":
        """Copy with rows in lexicographic coordinate order (not differentiable)."""
        order = np.lexsort(self.coords.T[::-1]) if len(self) else np.zeros(0, dtype=np.int64)
        return SparseTensor.from_arrays(self.coords[order], self.feats.data[order], self.stride)


def kernel_offsets(kernel_size: int, dim: int) -> np.ndarray:
    """Offsets of a cubic kernel in lexicographic order, first axis slowest.

    Odd sizes are centred (-(K-1)/2 .. (K-1)/2); even sizes span 0 .. K-1.
    """
    if kernel_size < 1:
        raise ValueError("kernel_size must be positive")
    if kernel_size % 2:
        r = np.arange(-(kernel_size // 2), kernel_size // 2 + 1)
    else:
        r = np.arange(kernel_size)
    grids = np.meshgrid(*([r] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def lexsorted_unique(coords: np.ndarray) -> np.ndarray:
    if len(coords) == 0:
        return coords.reshape(0, coords.shape[1]).astype(np.int64)
    return np.unique(coords, axis=0)
