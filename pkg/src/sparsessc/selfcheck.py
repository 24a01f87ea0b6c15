"""Oracle suites run by ``sparsessc selfcheck``: each returns (passed, detail)."""
from __future__ import annotations

import tempfile
import time
from pathlib import Path

import numpy as np

from . import oracles
from .fusion import mvf_lift
from .losses import bce_with_logits, focal, ga_loss, ga_weights, local_stats, weighted_ce
from .metrics import completion_iou, miou
from .network import (ASPPBlock, BlockConfig, CAMBlock, DecodeBlock, CompletionNet, SPNBlock, SRBlock,
                      make_scale_targets)
from .sparse import autograd as ag
from .sparse import checkpoint, ops
from .sparse.autograd import Var
from .sparse.dense import dense_oracle, dense_values_at
from .sparse.kernel_map import build_kernel_map
from .sparse.tensor import SparseTensor


def random_sparse(rng, size: int, dim: int = 3, m: int = 2, stride: int = 1, occupancy=None):
    occ = rng.uniform(0.05, 0.5) if occupancy is None else occupancy
    cells = size // stride
    mask = rng.random((cells,) * dim) < occ
    if not mask.any():
        mask[(0,) * dim] = True
    coords = np.argwhere(mask).astype(np.int64) * stride
    return coords, rng.standard_normal((len(coords), m))


def conv_case(rng, size=16, mode=None, K=None):
    """One random conv configuration checked against the dense oracle; returns max relative error."""
    mode = mode or str(rng.choice(["same", "strided", "transposed"]))
    draw = K is None
    if draw:
        K = int(rng.choice([1, 3, 5]))
    m_in, m_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    if mode == "same":
        coords, feats = random_sparse(rng, size, m=m_in)
        x = SparseTensor.from_arrays(coords, feats)
        w = rng.standard_normal((K ** 3, m_in, m_out))
        y = ops.conv(x, Var(w), K)
        grid, lo = dense_oracle(coords, feats, 1, w, K, mode="same")
    elif mode == "strided":
        K = int(rng.choice([1, 2, 3, 5])) if draw else K
        coords, feats = random_sparse(rng, size, m=m_in)
        x = SparseTensor.from_arrays(coords, feats)
        w = rng.standard_normal((K ** 3, m_in, m_out))
        y = ops.conv(x, Var(w), K, stride=2)
        grid, lo = dense_oracle(coords, feats, 1, w, K, mode="strided", up=2)
    else:
        K = int(rng.choice([1, 2, 3, 5])) if draw else K
        coords, feats = random_sparse(rng, size, m=m_in, stride=2)
        x = SparseTensor.from_arrays(coords, feats, stride=2)
        w = rng.standard_normal((K ** 3, m_in, m_out))
        y = ops.conv_transpose(x, Var(w), K, stride=2)
        grid, lo = dense_oracle(coords, feats, 2, w, K, mode="transposed", up=2)
    ref = dense_values_at(grid, lo, y.coords)
    got = y.feats.data
    err = np.abs(got - ref) / np.maximum(np.abs(ref), np.finfo(float).tiny)
    return float(err.max()) if err.size else 0.0


def suite_dense_conv(n: int = 60, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = max(conv_case(rng) for _ in range(n))
    return worst <= 1e-5, f"{n} cases, max relative error {worst:.2e}"


# ------------------------------------------------------------- gradients

def _project(out: Var, rng) -> tuple:
    """Random linear functional that turns an output into a scalar."""
    r = rng.standard_normal(out.shape)
    return lambda v: ag.sum(ag.mul(v, r))


def _elementwise(op, positive=False, shape=(5, 3)):
    def make(rng):
        a = rng.standard_normal(shape)
        a = np.abs(a) + 0.5 if positive else a
        a = Var(a, requires_grad=True)
        proj = _project(op(Var(a.data)), rng)
        return (lambda a: proj(op(a))), [a]
    return make


def _binary(op, positive_b=False, b_shape=(5, 3)):
    def make(rng):
        a = Var(rng.standard_normal((5, 3)), requires_grad=True)
        b = rng.standard_normal(b_shape)
        b = Var(np.abs(b) + 0.5 if positive_b else b, requires_grad=True)
        proj = _project(op(Var(a.data), Var(b.data)), rng)
        return (lambda a, b: proj(op(a, b))), [a, b]
    return make


def _sparse_case(build, m=2, size=6, stride=1):
    """``build(rng, m)`` returns (fn(x) -> SparseTensor, params); inputs include the features."""
    def make(rng):
        coords, feats = random_sparse(rng, size, m=m, stride=stride)
        x = SparseTensor.from_arrays(coords, feats, stride)
        op, params = build(rng, m)
        f = Var(feats, requires_grad=True)
        proj = _project(op(x).feats, rng)
        return (lambda f, *p: proj(op(x.with_feats(f)).feats)), [f] + list(params)
    return make


def _weights(rng, *shape):
    return Var(rng.standard_normal(shape) * 0.5, requires_grad=True)


def _conv(kind):
    def build(rng, m):
        K = int(rng.choice([1, 3])) if kind == "same" else 2
        w = _weights(rng, K ** 3, m, 2)
        if kind == "same":
            return (lambda x: ops.conv(x, w, K)), [w]
        if kind == "strided":
            return (lambda x: ops.conv(x, w, K, stride=2)), [w]
        return (lambda x: ops.conv_transpose(x, w, K, stride=2)), [w]
    return build


def _bn(running):
    def build(rng, m):
        g, b = _weights(rng, m), _weights(rng, m)
        stats = (rng.standard_normal(m), rng.uniform(0.5, 2, m)) if running else None
        return (lambda x: x.with_feats(ops.batch_norm(x.feats, g, b, running=stats))), [g, b]
    return build


def _mix(rng, m):
    def op(x):
        km = build_kernel_map(x.cset, x.cset, 3)
        return x.with_feats(ops.neighbor_mix(x.feats, a_for(len(x)), km))
    a = {}

    def a_for(n):
        if n not in a:
            a[n] = Var(rng.uniform(-0.1, 0.1, (n, 27)), requires_grad=True)
        return a[n]
    return op, []


def _block(factory):
    def build(rng, m):
        blk = factory(rng, m)
        return blk, blk.parameters()
    return build


def _spn(rng, m):
    blk = SPNBlock(3, m, 2, hidden=3, iterations=2, rng=rng)
    guide = {}

    def op(x):
        if len(x) not in guide:
            guide[len(x)] = Var(rng.standard_normal((len(x), 2)))
        return blk(x, x.with_feats(guide[len(x)]))
    return op, blk.parameters()


def _decode(rng, m):
    blk = DecodeBlock(3, m, 2, in_stride=2, rng=rng)
    blk.threshold = -np.inf  # structure fixed; pruning itself has no gradient
    return (lambda x: blk(x, cap=(8, 8, 8))[0]), blk.parameters()


def _loss(kind):
    def make(rng):
        n = int(rng.integers(3, 12))
        logits = Var(rng.standard_normal((n, 20)) * 2, requires_grad=True)
        y = rng.integers(0, 20, n)
        if kind == "ce":
            w = rng.uniform(0.1, 2.0, 20)
            return (lambda z: weighted_ce(z, y, w)), [logits]
        if kind == "focal":
            return (lambda z: focal(z, y, 2.0)), [logits]
        if kind == "ga":
            w = rng.uniform(0, 3, n)
            return (lambda z: ga_loss(z, y, w)), [logits]
        s = Var(rng.standard_normal((n, 1)) * 3, requires_grad=True)
        t = rng.random(n) < 0.5
        return (lambda s: bce_with_logits(s, t)), [s]
    return make


GRADIENT_CASES = {
    "add": _binary(ag.add, b_shape=(1, 3)), "sub": _binary(ag.sub), "mul": _binary(ag.mul),
    "div": _binary(ag.div, positive_b=True), "neg": _elementwise(ag.neg),
    "matmul": _binary(ag.matmul, b_shape=(3, 4)), "relu": _elementwise(ag.relu),
    "sigmoid": _elementwise(ag.sigmoid), "tanh": _elementwise(ag.tanh), "exp": _elementwise(ag.exp),
    "log": _elementwise(ag.log, positive=True), "abs": _elementwise(ag.absolute),
    "clamp_min": _elementwise(lambda a: ag.clamp_min(a, 0.2)),
    "sum": _elementwise(lambda a: ag.sum(a, axis=0)),
    "mean": _elementwise(lambda a: ag.mean(a, axis=1, keepdims=True)),
    "concat": _binary(lambda a, b: ag.concat([a, b], axis=1), b_shape=(5, 2)),
    "take_rows": _elementwise(lambda a: ag.take_rows(a, np.array([4, -1, 0, 0, 2]))),
    "reshape": _elementwise(lambda a: ag.reshape(a, (3, 5))),
    "conv": _sparse_case(_conv("same")),
    "conv_strided": _sparse_case(_conv("strided")),
    "conv_transposed": _sparse_case(_conv("transposed"), stride=2, size=8),
    "max_pool": _sparse_case(lambda rng, m: ((lambda x: ops.max_pool(x, 3)), [])),
    "batch_norm": _sparse_case(_bn(False)),
    "batch_norm_eval": _sparse_case(_bn(True)),
    "neighbor_mix": _sparse_case(_mix),
    "global_avg_pool": _sparse_case(
        lambda rng, m: ((lambda x: x.with_feats(ag.mul(x.feats, ops.global_avg_pool(x)))), [])),
    "linear": _sparse_case(lambda rng, m: (lambda w, b: ((lambda x: ops.linear(x, w, b)), [w, b]))(
        _weights(rng, m, 3), _weights(rng, 3))),
    "sr_block": _sparse_case(_block(lambda rng, m: SRBlock(m, 2, rng=rng)), m=4),
    "cam_block": _sparse_case(_block(lambda rng, m: CAMBlock(3, m, 3, 2, rng=rng)), m=4),
    "aspp_block": _sparse_case(_block(lambda rng, m: ASPPBlock(3, m, 3, (2, 3), rng=rng))),
    "decode_block": _sparse_case(_decode, stride=2, size=8),
    "spn_block": _sparse_case(_spn, m=3),
    "weighted_ce": _loss("ce"), "focal": _loss("focal"), "ga_loss": _loss("ga"),
    "bce": _loss("bce"),
}


def toy_network_case(rng):
    """Full 3D network on a random <= 8^3 input in training mode.

    The ground-truth pyramid is the input occupancy, so pruning keeps a non-empty
    structure; every parameter and the input features vary. Parameters are jittered
    off their initial values: zero biases and single-row batch statistics at the
    coarse strides otherwise leave scores and activations exactly on a threshold.
    """
    net = CompletionNet(BlockConfig(dim=3, in_channels=3, channels=(4, 4, 4, 4, 4), grid_dims=(8, 8, 8),
                             spn_hidden=4, seed=int(rng.integers(1 << 31))))
    for p in net.parameters():
        p.data = p.data + rng.normal(0.0, 0.1, p.data.shape)
    coords, feats = random_sparse(rng, 8, m=3, occupancy=rng.uniform(0.1, 0.4))
    x = SparseTensor.from_arrays(coords, feats)
    occ = np.zeros((8, 8, 8), dtype=bool)
    occ[tuple(coords.T)] = True
    targets = make_scale_targets(occ)
    base = net(x, targets).logits
    if len(base) == 0:
        raise RuntimeError("toy network produced no output voxels")
    r = rng.standard_normal(base.feats.shape)
    f = Var(feats, requires_grad=True)

    def fn(f, *params):
        out = net(x.with_feats(f), targets).logits
        if out.feats.shape != r.shape or not np.array_equal(out.coords, base.coords):
            raise oracles.StructureChanged("pruning pattern moved under the perturbation")
        return ag.sum(ag.mul(out.feats, r))

    return fn, [f] + net.parameters()


def gradient_report(n_ops: int = 100, n_net: int = 100, seed: int = 1):
    """{name: (worst relative error, skipped, tolerance)} for every op and the toy network."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, make in GRADIENT_CASES.items():
        worst, skipped = oracles.gradient_trials(make, n_ops, rng, 1e-4)
        out[name] = (worst, skipped, 1e-4)
    if n_net:
        worst, skipped = oracles.gradient_trials(toy_network_case, n_net, rng, 1e-3)
        out["network"] = (worst, skipped, 1e-3)
    return out


def suite_gradients(n_ops: int = 20, n_net: int = 20, seed: int = 1):
    rep = gradient_report(n_ops, n_net, seed)
    bad = [k for k, (w, _, tol) in rep.items() if w > tol]
    worst_op = max(w for k, (w, _, _) in rep.items() if k != "network")
    skipped = sum(s for _, s, _ in rep.values())
    detail = (f"{len(GRADIENT_CASES)} ops x {n_ops}, network x {n_net}; max op error "
              f"{worst_op:.1e}, network {rep['network'][0]:.1e}; {skipped} kink draws redrawn")
    return not bad, detail + (f"; failing: {', '.join(bad)}" if bad else "")


def suite_mvf(n: int = 40, seed: int = 2):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        X, Y, Z = rng.integers(2, 10, size=3)
        p3 = np.where(rng.random((X, Y, Z)) < 0.2, rng.integers(1, 5, (X, Y, Z)), 0)
        p2 = rng.integers(0, 5, (X, Y))
        got = mvf_lift(p3, p2)
        if not np.array_equal(got, oracles.mvf_oracle(p3, p2)):
            return False, "mismatch against the loop oracle"
        if not np.array_equal(got[p3 > 0], p3[p3 > 0]) or not np.array_equal(mvf_lift(got, p2), got):
            return False, "no-overwrite or idempotence violated"
    return True, f"{n} instances"


def suite_stats(n: int = 30, seed: int = 3):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        lab = rng.integers(0, 3, size=tuple(rng.integers(1, 6, size=3)))
        coords = np.argwhere(np.ones(lab.shape, bool))
        w = ga_weights(lab, coords)
        for c, wi in zip(coords, w):
            s = local_stats(lab, c)
            if abs(s.xi + s.eta * s.m_lga - wi) > 1e-12:
                return False, f"weight mismatch at {tuple(c)}"
    cube = np.full((6, 6, 6), 4)
    interior = np.argwhere(np.ones((4, 4, 4), bool)) + 1
    if np.any(ga_weights(cube, interior) != 0):
        return False, "nonzero weight inside a homogeneous cube"
    return True, f"{n} grids"


def suite_metrics(n: int = 200, seed: int = 4):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        shape = tuple(rng.integers(1, 6, size=3))
        k = int(rng.integers(2, 20))
        p, g = rng.integers(0, k, shape), rng.integers(0, k, shape)
        inv = rng.random(shape) < 0.1
        per, mean = miou(p, g, inv)
        o_per, o_mean, o_comp = oracles.iou_oracle(p, g, inv)
        present = {c for c in range(1, 20) if not np.isnan(per[c])}
        if present != set(o_per) or any(per[c] != o_per[c] for c in present):
            return False, "per-class IoU mismatch"
        if mean != o_mean or completion_iou(p, g, inv) != o_comp:
            return False, "mean or completion mismatch"
    a = np.ones((2, 2, 2), int)
    b = a.copy()
    b[1] = 2
    if miou(a, b)[1] != 0.25:
        return False, "hand case"
    return True, f"{n} grids"


def suite_scale_targets(n: int = 20, seed: int = 5):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        occ = rng.random(tuple(rng.integers(1, 40, size=3))) < 0.05
        t = make_scale_targets(occ)
        for f in (2, 4, 8, 16):
            if not np.array_equal(t.masks[f], oracles.max_pool_oracle(occ, f)):
                return False, f"factor {f} mismatch"
    return True, f"{n} grids"


def suite_checkpoint(seed: int = 6):
    net = CompletionNet(BlockConfig(dim=2, in_channels=7, channels=(4, 4, 4, 4, 4), grid_dims=(16, 16),
                             seed=seed))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "w.ckpt"
        checkpoint.save(path, net, {"network": 2})
        other = CompletionNet(BlockConfig(dim=2, in_channels=7, channels=(4, 4, 4, 4, 4),
                                   grid_dims=(16, 16), seed=seed + 1))
        checkpoint.load(path, other)
        for (n1, a), (n2, b) in zip(net.state_dict().items(), other.state_dict().items()):
            if n1 != n2 or not np.array_equal(a.astype(np.float32), b.astype(np.float32)):
                return False, f"round trip differs at {n1}"
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        try:
            checkpoint.load(path, other)
        except checkpoint.CheckpointError:
            return True, "round trip exact; corruption detected"
    return False, "corrupted weight blob was accepted"


SUITES = {
    "dense-conv": suite_dense_conv,
    "gradients": suite_gradients,
    "mvf": suite_mvf,
    "stats": suite_stats,
    "metrics": suite_metrics,
    "scale-targets": suite_scale_targets,
    "checkpoint": suite_checkpoint,
}


def run_all(names=None, echo=print) -> bool:
    ok = True
    for name, fn in SUITES.items():
        if names and name not in names:
            continue
        t = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing suite is a failing suite
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}  {name:<14} {detail}  ({time.perf_counter() - t:.1f}s)")
    return ok
