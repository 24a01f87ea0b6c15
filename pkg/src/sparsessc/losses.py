"""Training losses: weighted cross entropy, focal, completion BCE and the geometry-aware term."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sparse import autograd as ag
from .sparse.autograd import Var, record

# ------------------------------------------------------------- primitives


def log_softmax_pick(logits: Var, y: np.ndarray) -> Var:
    """log softmax(logits)[i, y_i] per row, stabilized by max subtraction."""
    z = logits.data
    y = np.asarray(y, dtype=np.int64)
    n = len(z)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    out = shifted[np.arange(n), y] - lse

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        d = -p * g[:, None]
        d[np.arange(n), y] += g
        return (d,)

    return record(out, (logits,), backward)


def _power(a: Var, gamma: float) -> Var:
    """a ** gamma for a in [0, 1]; gamma = 0 gives exact ones."""
    x = a.data
    if gamma == 0:
        return Var(np.ones_like(x))
    out = np.power(x, gamma)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = gamma * np.power(x, gamma - 1.0)
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return record(out, (a,), backward)


def _weighted_nll(logp: Var, weight) -> Var:
    n = max(len(logp), 1)
    return ag.div(ag.neg(ag.sum(ag.mul(weight, logp))), float(n))


def weighted_ce(logits: Var, y: np.ndarray, class_weights=None) -> Var:
    """Mean over rows of -w_y log softmax_y."""
    if len(y) == 0:
        return Var(np.zeros(()))
    logp = log_softmax_pick(logits, y)
    w = np.ones(len(y)) if class_weights is None else np.asarray(class_weights, float)[y]
    return _weighted_nll(logp, Var(w))


def focal(logits: Var, y: np.ndarray, gamma: float = 2.0) -> Var:
    """Mean over rows of -(1 - p_y)^gamma log p_y."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if len(y) == 0:
        return Var(np.zeros(()))
    logp = log_softmax_pick(logits, y)
    factor = _power(ag.clamp_min(ag.sub(1.0, ag.exp(logp)), 0.0), gamma)
    return _weighted_nll(logp, factor)


def bce_with_logits(scores: Var, target: np.ndarray) -> Var:
    """Mean binary cross entropy of sigmoid(scores) against boolean targets."""
    s = scores.data.reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    n = len(s)
    if n == 0:
        return Var(np.zeros(()))
    val = (np.maximum(s, 0) - s * t + np.log1p(np.exp(-np.abs(s)))).sum() / n
    shape = scores.data.shape

    def backward(g):
        e = np.exp(-np.abs(s))
        sig = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return ((g * (sig - t) / n).reshape(shape),)

    return record(np.asarray(val), (scores,), backward)


bce_completion = bce_with_logits


def class_weights_from_counts(counts) -> np.ndarray:
    """Inverse log frequency 1 / ln(1.02 + f_c)."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    f = counts / total if total > 0 else np.zeros_like(counts)
    return 1.0 / np.log(1.02 + f)


# ------------------------------------------------ neighbourhood statistics

@dataclass(frozen=True)
class NeighborhoodStats:
    m_lga: int
    xi: float
    eta: float
    k: int
    classes: tuple = field(default=())


def _axis_lines(dim: int):
    """For each axis, the pair of opposite unit offsets."""
    for a in range(dim):
        e = np.zeros(dim, dtype=np.int64)
        e[a] = 1
        yield e, -e


def local_stats(labels: np.ndarray, coord) -> NeighborhoodStats:
    """Statistics of one voxel's 26-neighbourhood (8 in 2D), clipped at the border."""
    labels = np.asarray(labels)
    c = np.asarray(coord, dtype=np.int64)
    dims = np.asarray(labels.shape)
    centre = labels[tuple(c)]
    window = [labels[tuple(c)]]
    m = 0
    k = 0
    for off in np.ndindex(*([3] * labels.ndim)):
        o = np.asarray(off) - 1
        if not o.any():
            continue
        q = c + o
        if np.any(q < 0) or np.any(q >= dims):
            continue
        k += 1
        v = labels[tuple(q)]
        window.append(v)
        m += int(v != centre)
    vals, counts = np.unique(np.asarray(window), return_counts=True)
    p = counts / counts.sum()
    xi = float(-(p * np.log(p)).sum())
    disc = struct = 0
    for pos, neg in _axis_lines(labels.ndim):
        line = []
        for q in (c + neg, c + pos):
            if np.all(q >= 0) and np.all(q < dims):
                line.append(labels[tuple(q)])
        changes = sum(int(v != centre) for v in line)
        if changes:
            disc += 1
            struct += int(changes <= 1)
    eta = 1.0 if disc == 0 else 1.0 - struct / disc
    return NeighborhoodStats(m, xi, float(np.clip(eta, 0.0, 1.0)), k, tuple(int(v) for v in vals))


def _neighbourhood(labels: np.ndarray, coords: np.ndarray):
    """(n, 3^d) labels around each coordinate (-1 outside) with the centre column index."""
    d = labels.ndim
    padded = np.pad(labels.astype(np.int64), 1, constant_values=-1)
    offs = np.stack(np.meshgrid(*([np.arange(-1, 2)] * d), indexing="ij"), -1).reshape(-1, d)
    q = coords[:, None, :] + 1 + offs[None, :, :]
    nb = padded[tuple(np.moveaxis(q, -1, 0))]
    return nb, offs


def ga_weights(labels: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Per-coordinate xi + eta * M_LGA from a dense label grid (vectorized local_stats)."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, labels.ndim)
    n = len(coords)
    if n == 0:
        return np.zeros(0)
    nb, offs = _neighbourhood(labels, coords)
    ci = len(offs) // 2
    centre = nb[:, ci:ci + 1]
    inside = nb >= 0
    m = ((nb != centre) & inside).sum(axis=1)
    # entropy over neighbourhood plus centre
    nclass = int(max(labels.max(initial=0), 0)) + 2
    key = np.arange(n)[:, None] * nclass + (nb + 1)
    counts = np.bincount(key[inside], minlength=n * nclass).reshape(n, nclass)[:, 1:]
    p = counts / counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    xi = np.where(xi == 0, 0.0, xi)  # drop negative zero
    disc = np.zeros(n, dtype=np.int64)
    struct = np.zeros(n, dtype=np.int64)
    for e, _ in _axis_lines(labels.ndim):
        pos = np.flatnonzero((offs == e).all(axis=1))[0]
        neg = np.flatnonzero((offs == -e).all(axis=1))[0]
        changes = np.zeros(n, dtype=np.int64)
        for col in (neg, pos):
            changes += (inside[:, col] & (nb[:, col] != centre[:, 0])).astype(np.int64)
        disc += changes > 0
        struct += (changes > 0) & (changes <= 1)
    eta = np.where(disc == 0, 1.0, 1.0 - struct / np.maximum(disc, 1))
    return xi + eta * m


def ga_loss(logits: Var, y: np.ndarray, weights: np.ndarray) -> Var:
    """-(1/N) sum_v w_v log p_{v, y_v} with w held constant."""
    if len(y) == 0:
        return Var(np.zeros(()))
    return _weighted_nll(log_softmax_pick(logits, y), Var(np.asarray(weights, dtype=np.float64)))


# ----------------------------------------------------------- combinations

@dataclass(frozen=True)
class LossConfig2D:
    alpha: float = 0.5
    beta: float = 0.5
    omega: float = 1.0
    gamma: float = 2.0
    class_weights: tuple | None = None

    def __post_init__(self):
        if min(self.alpha, self.beta, self.omega, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")


@dataclass(frozen=True)
class LossConfig3D:
    lam: float = 0.35

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass(eq=False)
class LossTerms:
    total: Var
    parts: dict

    def item(self) -> float:
        return float(self.total.data)


def completion_terms(scores: dict, targets) -> dict:
    """BCE of each prune head against the occupancy target at its stride.

    At stride 1 voxels with invalid ground truth are left out.
    """
    terms = {}
    for s, sc in sorted(scores.items()):
        t = targets.lookup(s, sc.coords)
        if s == 1:
            keep = targets.valid_at(sc.coords)
            rows = np.flatnonzero(keep)
            terms[s] = bce_with_logits(ag.take_rows(sc.feats, rows), t[rows])
        else:
            terms[s] = bce_with_logits(sc.feats, t)
    return terms


def _sum(vars_) -> Var:
    out = Var(np.zeros(()))
    for v in vars_:
        out = ag.add(out, v)
    return out


def loss_2d(logits: Var, y: np.ndarray, completion: dict, cfg: LossConfig2D = LossConfig2D()) -> LossTerms:
    """alpha * weighted CE + beta * focal + omega * summed completion BCE."""
    wce = weighted_ce(logits, y, cfg.class_weights)
    foc = focal(logits, y, cfg.gamma)
    bce = _sum(completion.values())
    total = ag.add(ag.add(ag.mul(cfg.alpha, wce), ag.mul(cfg.beta, foc)), ag.mul(cfg.omega, bce))
    return LossTerms(total, {"wce": float(wce.data), "focal": float(foc.data), "bce": float(bce.data)})


def loss_3d(logits: Var, y: np.ndarray, weights: np.ndarray, completion: dict,
            cfg: LossConfig3D = LossConfig3D()) -> LossTerms:
    """lambda * summed completion BCE + (1 - lambda) * geometry-aware loss."""
    bce = _sum(completion.values())
    ga = ga_loss(logits, y, weights)
    total = ag.add(ag.mul(cfg.lam, bce), ag.mul(1.0 - cfg.lam, ga))
    return LossTerms(total, {"bce": float(bce.data), "ga": float(ga.data)})
