"""SGD and Adam updates with L2 weight decay, and a step-wise exponential schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: dict, lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0) -> list[np.ndarray]:
    """v <- momentum * v + (g + wd * p); p <- p - lr * v. The first step uses v = g + wd * p."""
    bufs = state.setdefault("momentum", [None] * len(params))
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        d = g + weight_decay * p if weight_decay else g
        if momentum:
            d = d.copy() if bufs[i] is None else momentum * bufs[i] + d
            bufs[i] = d
        out.append(p - lr * d)
    return out


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: dict, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> list[np.ndarray]:
    """Bias-corrected Adam with the decay term added to the gradient."""
    b1, b2 = betas
    t = state["t"] = state.get("t", 0) + 1
    m = state.setdefault("m", [np.zeros_like(p) for p in params])
    v = state.setdefault("v", [np.zeros_like(p) for p in params])
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        d = g + weight_decay * p if weight_decay else g
        m[i] = b1 * m[i] + (1 - b1) * d
        v[i] = b2 * v[i] + (1 - b2) * d * d
        mhat = m[i] / (1 - b1 ** t)
        vhat = v[i] / (1 - b2 ** t)
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out


@dataclass(frozen=True)
class ExponentialSchedule:
    """lr(epoch) = base * decay ** (epoch // every)."""

    base: float
    decay: float = 0.9
    every: int = 10

    def __post_init__(self):
        if self.base < 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.every < 1:
            raise ValueError("decay interval must be at least one epoch")

    def __call__(self, epoch: int) -> float:
        return self.base * self.decay ** (epoch // self.every)


class Optimizer:
    """Applies sgd_step or adam_step to a list of Var parameters in place."""

    def __init__(self, params, kind: str = "sgd", momentum: float = 0.9, betas=(0.9, 0.999),
                 weight_decay: float = 0.0, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = list(params)
        self.kind, self.momentum, self.betas = kind, momentum, tuple(betas)
        self.weight_decay, self.eps = weight_decay, eps
        self.state: dict = {}

    def step(self, grads, lr: float) -> None:
        data = [p.data for p in self.params]
        grads = [np.asarray(g, dtype=p.dtype) for g, p in zip(grads, data)]
        if self.kind == "sgd":
            new = sgd_step(data, grads, self.state, lr, self.momentum, self.weight_decay)
        else:
            new = adam_step(data, grads, self.state, lr, self.betas, self.eps, self.weight_decay)
        for p, v in zip(self.params, new):
            p.data = v.astype(p.data.dtype, copy=False)
