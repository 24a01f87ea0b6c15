"""Reverse-mode differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it.
``Tape.gradient`` walks the record backwards and accumulates adjoints; it does
not mutate the record, so calling it twice gives identical results.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class Var:
    """A numpy array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Var(shape={self.data.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Records differentiable operations for reverse accumulation.

    Usage::

        with Tape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def gradient(self, target: Var, sources: Sequence[Var], seed=None) -> list[np.ndarray]:
        if seed is None:
            seed = np.ones_like(target.data)
        grads: dict[int, np.ndarray] = {id(target): np.asarray(seed, dtype=target.data.dtype)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            parent_grads = node.backward(g)
            for p, gp in zip(node.parents, parent_grads):
                if gp is None or not isinstance(p, Var) or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + gp
                else:
                    grads[key] = gp
        return [grads[id(s)] if id(s) in grads else np.zeros_like(s.data) for s in sources]


def recording() -> bool:
    return bool(_ACTIVE)


def record(out_data, parents: Sequence, backward: Callable) -> Var:
    """Wrap ``out_data`` as a Var and log the op on every active tape."""
    req = any(isinstance(p, Var) and p.requires_grad for p in parents)
    out = Var(out_data, requires_grad=req)
    if req and _ACTIVE:
        node = _Node(out, tuple(parents), backward)
        for tape in _ACTIVE:
            tape.nodes.append(node)
    return out


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    ad, bd = _data(a), _data(b)
    return record(ad + bd, (a, b),
                  lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)))


def sub(a, b) -> Var:
    ad, bd = _data(a), _data(b)
    return record(ad - bd, (a, b),
                  lambda g: (_unbroadcast(g, ad.shape), -_unbroadcast(g, bd.shape)))


def mul(a, b) -> Var:
    ad, bd = _data(a), _data(b)
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Var:
    ad, bd = _data(a), _data(b)
    out = ad / bd
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Var:
    return record(-_data(a), (a,), lambda g: (-g,))


def matmul(a, b) -> Var:
    ad, bd = _data(a), _data(b)
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def relu(a) -> Var:
    ad = _data(a)
    mask = ad > 0
    return record(np.where(mask, ad, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Var:
    ad = _data(a)
    out = _stable_sigmoid(ad)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Var:
    out = np.tanh(_data(a))
    return record(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Var:
    out = np.exp(_data(a))
    return record(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    ad = _data(a)
    return record(np.log(ad), (a,), lambda g: (g / ad,))


def absolute(a) -> Var:
    ad = _data(a)
    return record(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def clamp_min(a, lo: float) -> Var:
    """max(a, lo) elementwise; gradient passes where a > lo."""
    ad = _data(a)
    mask = ad > lo
    return record(np.where(mask, ad, lo), (a,), lambda g: (g * mask,))


# ------------------------------------------------------------------ reductions

def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return record(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    ad = _data(a)
    count = ad.size if axis is None else ad.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


# ----------------------------------------------------------------- structural

def concat(items: Sequence, axis: int = 1) -> Var:
    datas = [_data(x) for x in items]
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return record(np.concatenate(datas, axis=axis), tuple(items), backward)


def take_rows(a, rows: np.ndarray) -> Var:
    """Gather rows of ``a``; a row index of -1 yields a zero row."""
    ad = _data(a)
    rows = np.asarray(rows, dtype=np.int64)
    valid = rows >= 0
    out = np.zeros((len(rows),) + ad.shape[1:], dtype=ad.dtype)
    out[valid] = ad[rows[valid]]

    def backward(g):
        ga = np.zeros_like(ad)
        np.add.at(ga, rows[valid], g[valid])
        return (ga,)

    return record(out, (a,), backward)


def reshape(a, shape) -> Var:
    ad = _data(a)
    return record(ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))
