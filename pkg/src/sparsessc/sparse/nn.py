"""Parameterised layers built on the sparse ops."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autograd as ag
from . import ops
from .autograd import Var
from .tensor import SparseTensor


class Module:
    """Base class: parameters are ``Var`` attributes with ``requires_grad``."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Var) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Var]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def records(self, prefix: str = ""):
        """(name, kernel_size, dim, m_in, m_out, array) for checkpointing."""
        for name, value in vars(self).items():
            if isinstance(value, Var) and value.requires_grad:
                yield (prefix + name,) + _shape_record(value.data) + (value.data,)
        for name in getattr(self, "_buffer_names", ()):
            value = getattr(self, name)
            yield (prefix + name,) + _shape_record(value) + (value,)
        for name, child in self._children():
            yield from child.records(f"{prefix}{name}.")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())
        out.update((n, b.copy()) for n, b in self.named_buffers())
        return out

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"missing entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.size != p.data.size:
                raise ValueError(f"{name}: size {arr.size} != {p.data.size}")
            p.data = arr.reshape(p.data.shape).astype(p.data.dtype)
        for name in buffers:
            owner, attr = self._resolve(name)
            cur = getattr(owner, attr)
            setattr(owner, attr, np.asarray(state[name]).reshape(cur.shape).astype(cur.dtype))

    def _resolve(self, dotted: str):
        parts = dotted.split(".")
        obj = self
        for p in parts[:-1]:
            obj = obj[int(p)] if isinstance(obj, (list, tuple)) else getattr(obj, p)
        return obj, parts[-1]

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for name, _ in list(self.named_buffers()):
            owner, attr = self._resolve(name)
            setattr(owner, attr, getattr(owner, attr).astype(dtype))
        return self


def _shape_record(a: np.ndarray):
    if a.ndim == 3:
        vol, m_in, m_out = a.shape
        for d in (3, 2, 1):
            k = round(vol ** (1.0 / d))
            if k ** d == vol:
                return k, d, m_in, m_out
    if a.ndim == 2:
        return 1, 0, a.shape[0], a.shape[1]
    return 1, 0, 1, a.size


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Conv(Module):
    """Sparse (transposed) convolution layer with optional bias."""

    def __init__(self, dim: int, m_in: int, m_out: int, kernel_size: int = 3, stride: int = 1,
                 dilation: int = 1, transposed: bool = False, bias: bool = False,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        vol = kernel_size ** dim
        self.dim, self.kernel_size, self.stride, self.dilation = dim, kernel_size, stride, dilation
        self.transposed = transposed
        self.weight = Var(glorot(rng, (vol, m_in, m_out), vol * m_in, vol * m_out), requires_grad=True)
        self.bias = Var(np.zeros(m_out), requires_grad=True) if bias else None

    @property
    def m_in(self):
        return self.weight.shape[1]

    @property
    def m_out(self):
        return self.weight.shape[2]

    def records(self, prefix: str = ""):
        w = self.weight.data
        yield (prefix + "weight", self.kernel_size, self.dim, w.shape[1], w.shape[2], w)
        if self.bias is not None:
            yield (prefix + "bias", 1, 0, 1, len(self.bias.data), self.bias.data)

    def __call__(self, x: SparseTensor, cap=None, out_set=None) -> SparseTensor:
        if self.transposed:
            return ops.transposed_conv_forward(x, self.weight, self.kernel_size, self.stride,
                                               self.dilation, self.bias, cap=cap)
        return ops.sparse_conv_forward(x, self.weight, self.kernel_size, self.stride,
                                       self.dilation, self.bias, out_set=out_set)


class Linear(Module):
    def __init__(self, m_in: int, m_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Var(glorot(rng, (m_in, m_out), m_in, m_out), requires_grad=True)
        self.bias = Var(np.zeros(m_out), requires_grad=True) if bias else None

    def __call__(self, v: Var) -> Var:
        out = ag.matmul(v, self.weight)
        return out if self.bias is None else ag.add(out, self.bias)


class BatchNorm(Module):
    """Per-channel statistics over coordinates; running averages used in eval mode."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, m: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Var(np.ones(m), requires_grad=True)
        self.beta = Var(np.zeros(m), requires_grad=True)
        self.running_mean = np.zeros(m)
        self.running_var = np.ones(m)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: SparseTensor) -> SparseTensor:
        f = x.feats
        if not self.training:
            running = (self.running_mean, self.running_var)
            return x.with_feats(ops.batch_norm(f, self.gamma, self.beta, self.eps, running))
        if len(f) > 1:
            mu = f.data.mean(axis=0)
            var = f.data.var(axis=0)
            a = self.momentum
            self.running_mean = (1 - a) * self.running_mean + a * mu
            self.running_var = (1 - a) * self.running_var + a * var
        return x.with_feats(ops.batch_norm(f, self.gamma, self.beta, self.eps))


class Identity(Module):
    def __call__(self, x):
        return x
