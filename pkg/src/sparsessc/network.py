"""Sparse encoder-decoder networks for 3D completion and 2D bird's-eye-view segmentation.

Building blocks: squeeze re-weighting (SR), context aggregation (CAM), sparse
atrous pyramid pooling (ASPP), generative decoding with learned pruning, and a
spatial propagation refinement (SPN) driven by a small guidance network.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .sparse import autograd as ag
from .sparse import ops
from .sparse.autograd import Var
from .sparse.kernel_map import build_kernel_map
from .sparse.nn import BatchNorm, Conv, Linear, Module
from .sparse.tensor import CoordSet, SparseTensor

NUM_CLASSES = 20


@dataclass(frozen=True)
class BlockConfig:
    dim: int = 3
    in_channels: int = 6
    channels: tuple = (16, 32, 64, 128, 128)  # strides 1, 2, 4, 8, 16
    num_classes: int = NUM_CLASSES
    aspp_rates: tuple = (2, 3, 4)
    cam_kernel: int = 7
    reduction: int = 4
    spn_iterations: int = 3
    spn_hidden: int = 16
    prune_threshold: float = 0.0
    grid_dims: tuple = (256, 256, 32)
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        if len(self.channels) != 5 or min(self.channels) <= 0:
            raise ConfigError("channels needs five positive widths (strides 1..16)")
        if len(self.grid_dims) != self.dim:
            raise ConfigError(f"grid_dims {self.grid_dims} does not match dim {self.dim}")
        if self.spn_iterations < 0:
            raise ConfigError("spn_iterations must be nonnegative")

    @property
    def strides(self):
        return (1, 2, 4, 8, 16)


# ------------------------------------------------------------ scale targets

@dataclass(frozen=True, eq=False)
class ScaleTargets:
    """Occupancy masks of the ground truth at strides 1, 2, 4, 8 and 16.

    ``masks[s]`` has shape ceil(dims / s); cell ``c`` is True when any occupied
    voxel lies in the block ``[c*s, (c+1)*s)``. ``invalid`` marks ignored voxels
    at stride 1.
    """

    masks: dict
    invalid: np.ndarray | None = None

    def lookup(self, stride: int, coords: np.ndarray) -> np.ndarray:
        m = self.masks[stride]
        cell = np.asarray(coords, dtype=np.int64).reshape(-1, m.ndim) // stride
        ok = np.all((cell >= 0) & (cell < np.asarray(m.shape)), axis=1)
        out = np.zeros(len(cell), dtype=bool)
        out[ok] = m[tuple(cell[ok].T)]
        return out

    def valid_at(self, coords: np.ndarray) -> np.ndarray:
        """Stride-1 coordinates whose ground truth is not marked invalid."""
        if self.invalid is None:
            return np.ones(len(coords), dtype=bool)
        c = np.asarray(coords, dtype=np.int64).reshape(-1, self.invalid.ndim)
        return ~self.invalid[tuple(c.T)]


def max_pool_mask(occ: np.ndarray, factor: int) -> np.ndarray:
    pad = [(0, (-n) % factor) for n in occ.shape]
    a = np.pad(occ, pad)
    shape = []
    for n in a.shape:
        shape += [n // factor, factor]
    return a.reshape(shape).any(axis=tuple(range(1, 2 * occ.ndim, 2)))


def make_scale_targets(occupancy, invalid=None, factors=(2, 4, 8, 16)) -> ScaleTargets:
    """Max-pooled occupancy pyramid. Accepts a boolean array or a DenseLabelGrid."""
    if hasattr(occupancy, "labels"):
        invalid = occupancy.invalid if invalid is None else invalid
        occupancy = occupancy.labels > 0
    occ = np.asarray(occupancy, dtype=bool)
    if invalid is not None:
        occ = occ & ~np.asarray(invalid, dtype=bool)
    masks = {1: occ}
    for f in factors:
        masks[f] = max_pool_mask(occ, f)
    return ScaleTargets(masks, None if invalid is None else np.asarray(invalid, dtype=bool))


# ------------------------------------------------------------------- blocks

class ConvBNReLU(Module):
    def __init__(self, dim, m_in, m_out, kernel_size=3, stride=1, dilation=1, transposed=False,
                 rng=None):
        self.conv = Conv(dim, m_in, m_out, kernel_size, stride, dilation, transposed, rng=rng)
        self.bn = BatchNorm(m_out)

    def __call__(self, x: SparseTensor, cap=None) -> SparseTensor:
        return ops.relu(self.bn(self.conv(x, cap=cap)))


class SRBlock(Module):
    """Channel re-weighting by a gate computed from the global feature mean."""

    def __init__(self, m: int, reduction: int = 4, rng=None):
        h = max(m // reduction, 4)
        self.fc1 = Linear(m, h, rng=rng)
        self.fc2 = Linear(h, m, rng=rng)

    def gate(self, x: SparseTensor) -> Var:
        return ag.sigmoid(self.fc2(ag.relu(self.fc1(ops.global_avg_pool(x)))))

    def __call__(self, x: SparseTensor) -> SparseTensor:
        if len(x) == 0:
            return x
        return ops.broadcast_mul(x, self.gate(x))


def sr_block(x: SparseTensor, block: SRBlock) -> SparseTensor:
    return block(x)


class CAMBlock(Module):
    """Per-coordinate gate from a large-kernel max-pooled context and a bottleneck."""

    def __init__(self, dim: int, m: int, kernel_size: int = 7, reduction: int = 4, rng=None):
        h = max(m // reduction, 4)
        self.kernel_size = kernel_size
        self.fc1 = Linear(m, h, rng=rng)
        self.fc2 = Linear(h, m, rng=rng)

    def gate_logits(self, x: SparseTensor) -> Var:
        ctx = ops.max_pool(x, self.kernel_size)
        return self.fc2(ag.relu(self.fc1(ctx.feats)))

    def __call__(self, x: SparseTensor) -> SparseTensor:
        if len(x) == 0:
            return x
        return x.with_feats(ag.mul(x.feats, ag.sigmoid(self.gate_logits(x))))


def cam_block(x: SparseTensor, block: CAMBlock) -> SparseTensor:
    return block(x)


class ASPPBlock(Module):
    """Dilated 3-kernel branches plus a 1-kernel branch, concatenated and fused."""

    def __init__(self, dim: int, m_in: int, m_out: int, rates=(2, 3, 4), rng=None):
        self.rates = tuple(rates)
        self.branches = [Conv(dim, m_in, m_out, 3, dilation=r, rng=rng) for r in self.rates]
        self.point = Conv(dim, m_in, m_out, 1, rng=rng)
        self.fuse = Conv(dim, m_out * (len(self.rates) + 1), m_out, 1, rng=rng)

    def branch_outputs(self, x: SparseTensor) -> list[SparseTensor]:
        return [b(x) for b in self.branches] + [self.point(x)]

    def __call__(self, x: SparseTensor) -> SparseTensor:
        return self.fuse(ops.concat_features(*self.branch_outputs(x)))


def aspp_block(x: SparseTensor, block: ASPPBlock) -> SparseTensor:
    return block(x)


class DecodeBlock(Module):
    """Upsample x2 by transposed convolution, merge the skip, refine, score and prune.

    In training mode with targets, coordinates inside the target mask survive
    regardless of score so that later stages see every true cell.
    """

    def __init__(self, dim: int, m_in: int, m_out: int, in_stride: int, rng=None):
        self.in_stride = in_stride
        self.up = ConvBNReLU(dim, m_in, m_out, kernel_size=2, stride=2, transposed=True, rng=rng)
        self.refine = ConvBNReLU(dim, m_out, m_out, 3, rng=rng)
        self.sr = SRBlock(m_out, rng=rng)
        self.score = Conv(dim, m_out, 1, 1, bias=True, rng=rng)
        self.threshold = 0.0

    def __call__(self, x: SparseTensor, skip: SparseTensor | None = None,
                 targets: ScaleTargets | None = None, cap=None):
        if any(s != self.in_stride for s in x.stride):
            raise ConfigError(f"decode block expects stride {self.in_stride}, got {x.stride}")
        y = self.up(x, cap=cap)
        if skip is not None:
            y = ops.add_matching(y, skip)
        y = self.sr(self.refine(y))
        scores = self.score(y)
        force = None
        if self.training and targets is not None:
            force = targets.lookup(self.in_stride // 2, y.coords)
        return ops.prune(y, scores.feats, self.threshold, force_keep=force), scores


def decode_block(x, block: DecodeBlock, skip=None, targets=None, cap=None):
    return block(x, skip, targets, cap)


def normalize_affinity(logits: Var, exists: np.ndarray) -> Var:
    """tanh affinities restricted to existing neighbours, scaled so sum |a| <= 1."""
    a = ag.mul(ag.tanh(logits), exists.astype(logits.dtype))
    total = ag.sum(ag.absolute(a), axis=1, keepdims=True)
    return ag.div(a, ag.clamp_min(total, 1.0))


def neighbor_exists(kmap) -> np.ndarray:
    e = np.zeros((kmap.n_out, len(kmap)), dtype=bool)
    for k, o in enumerate(kmap.out_rows):
        e[o, k] = True
    return e


def spn_propagate(y: SparseTensor, affinity: Var, iterations: int) -> SparseTensor:
    """y <- (1 - sum_i a_i) y + sum_i a_i y_i over the 3-kernel neighbourhood.

    ``affinity`` has one column per kernel offset (centre included, normally
    zero) and is used as given.
    """
    kmap = build_kernel_map(y.cset, y.cset, 3)
    keep = ag.sub(1.0, ag.sum(affinity, axis=1, keepdims=True))
    f = y.feats
    for _ in range(iterations):
        f = ag.add(ag.mul(keep, f), ops.neighbor_mix(f, affinity, kmap))
    return y.with_feats(f)


class SPNBlock(Module):
    """Guidance convolutions produce neighbour affinities that diffuse the logits."""

    def __init__(self, dim: int, m_logits: int, m_guide: int, hidden: int = 16,
                 iterations: int = 3, rng=None):
        self.dim, self.iterations = dim, iterations
        self.g1 = ConvBNReLU(dim, m_logits + m_guide, hidden, 3, rng=rng)
        self.g2 = Conv(dim, hidden, 3 ** dim, 3, bias=True, rng=rng)
        self.centre = (3 ** dim) // 2

    def affinity(self, logits: SparseTensor, guide: SparseTensor) -> Var:
        raw = self.g2(self.g1(ops.concat_features(logits, guide))).feats
        exists = neighbor_exists(build_kernel_map(logits.cset, logits.cset, 3))
        exists[:, self.centre] = False
        return normalize_affinity(raw, exists)

    def __call__(self, logits: SparseTensor, guide: SparseTensor) -> SparseTensor:
        if len(logits) == 0 or self.iterations == 0:
            return logits
        return spn_propagate(logits, self.affinity(logits, guide), self.iterations)


def spn_block(x: SparseTensor, block: SPNBlock, guide: SparseTensor) -> SparseTensor:
    return block(x, guide)


# -------------------------------------------------------------------- model

@dataclass(eq=False)
class NetOutput:
    logits: SparseTensor
    scores: dict = field(default_factory=dict)  # stride -> SparseTensor of (n, 1) prune scores
    features: SparseTensor | None = None
    empty: bool = False

    def labels(self) -> np.ndarray:
        if len(self.logits) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.logits.feats.data, axis=1)


class CompletionNet(Module):
    """Four-stage sparse encoder, ASPP bottleneck, pruning decoder and SPN head."""

    def __init__(self, cfg: BlockConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d, c = cfg.dim, cfg.channels
        self.stem = ConvBNReLU(d, cfg.in_channels, c[0], 3, rng=rng)
        self.down = [ConvBNReLU(d, c[i], c[i + 1], 2, stride=2, rng=rng) for i in range(4)]
        self.enc = [ConvBNReLU(d, c[i + 1], c[i + 1], 3, rng=rng) for i in range(4)]
        self.cam = [CAMBlock(d, c[i + 1], cfg.cam_kernel, cfg.reduction, rng=rng) for i in range(4)]
        self.sr = [SRBlock(c[i + 1], cfg.reduction, rng=rng) for i in range(4)]
        self.aspp = ASPPBlock(d, c[4], c[4], cfg.aspp_rates, rng=rng)
        self.aspp_bn = BatchNorm(c[4])
        self.grow = ConvBNReLU(d, c[4], c[4], 3, transposed=True, rng=rng)
        self.grow_score = Conv(d, c[4], 1, 1, bias=True, rng=rng)
        self.dec = [DecodeBlock(d, c[i + 1], c[i], 2 ** (i + 1), rng=rng) for i in reversed(range(4))]
        self.classifier = Conv(d, c[0], cfg.num_classes, 1, bias=True, rng=rng)
        self.spn = SPNBlock(d, cfg.num_classes, c[0], cfg.spn_hidden, cfg.spn_iterations, rng=rng)
        for blk in self.dec:
            blk.threshold = cfg.prune_threshold

    def encode(self, x: SparseTensor):
        h = self.stem(x)
        skips = {1: h}
        for i in range(4):
            h = self.down[i](h)
            h = self.sr[i](self.cam[i](self.enc[i](h)))
            skips[2 ** (i + 1)] = h
        return h, skips

    def __call__(self, x: SparseTensor, targets: ScaleTargets | None = None) -> NetOutput:
        cfg = self.cfg
        if x.dim != cfg.dim or x.num_channels != cfg.in_channels:
            raise ConfigError(f"input has dim {x.dim} and {x.num_channels} channels; "
                              f"network expects {cfg.dim} and {cfg.in_channels}")
        if len(x) == 0:
            empty = SparseTensor.from_arrays(np.zeros((0, cfg.dim), np.int64),
                                             np.zeros((0, cfg.num_classes)))
            return NetOutput(empty, {}, None, empty=True)
        cap = cfg.grid_dims
        h, skips = self.encode(x)
        h = ops.relu(self.aspp_bn(self.aspp(h)))
        h = ops.add_matching(self.grow(h, cap=cap), h)
        s16 = self.grow_score(h)
        force = targets.lookup(16, h.coords) if (self.training and targets is not None) else None
        h = ops.prune(h, s16.feats, cfg.prune_threshold, force_keep=force)
        scores = {16: s16}
        for blk in self.dec:
            if len(h) == 0:
                break
            s_out = blk.in_stride // 2
            h, sc = blk(h, skips[s_out], targets, cap)
            scores[s_out] = sc
        if len(h) == 0 or h.stride[0] != 1:
            empty = SparseTensor.from_arrays(np.zeros((0, cfg.dim), np.int64),
                                             np.zeros((0, cfg.num_classes)))
            return NetOutput(empty, scores, None, empty=True)
        logits = self.classifier(h)
        logits = self.spn(logits, h)
        return NetOutput(logits, scores, h)


def CompletionNet3D(cfg: BlockConfig | None = None, **kw) -> CompletionNet:
    kw.setdefault("in_channels", 6)
    cfg = cfg or BlockConfig(dim=3, **kw)
    if cfg.dim != 3:
        raise ConfigError("3D network needs dim=3")
    return CompletionNet(cfg)


def CompletionNet2D(cfg: BlockConfig | None = None, **kw) -> CompletionNet:
    kw.setdefault("grid_dims", (256, 256))
    kw.setdefault("in_channels", 7)
    cfg = cfg or BlockConfig(dim=2, **kw)
    if cfg.dim != 2:
        raise ConfigError("2D network needs dim=2")
    return CompletionNet(cfg)


def s3cnet_3d_forward(net: CompletionNet, x: SparseTensor, targets: ScaleTargets | None = None):
    out = net(x, targets)
    return out.logits, out.scores


def s3cnet_2d_forward(net: CompletionNet, x: SparseTensor, targets: ScaleTargets | None = None):
    out = net(x, targets)
    return out.logits, out.scores


# ------------------------------------------------------------ predictions

def labels_to_grid(out: NetOutput, dims) -> np.ndarray:
    """Dense class grid from the network output; coordinates not produced are empty (0)."""
    grid = np.zeros(tuple(dims), dtype=np.uint8)
    if len(out.logits):
        c = out.logits.coords
        grid[tuple(c.T)] = out.labels().astype(np.uint8)
    return grid


def bev_labels(labels: np.ndarray) -> np.ndarray:
    """Top-most occupied class per (x, y) column of a 3D label grid (0 if the column is empty)."""
    occ = labels > 0
    z = labels.shape[2]
    top = z - 1 - np.argmax(occ[:, :, ::-1], axis=2)
    out = np.take_along_axis(labels, top[..., None], axis=2)[..., 0]
    return np.where(occ.any(axis=2), out, 0).astype(np.uint8)


def logits_to_dense(out: NetOutput, dims) -> np.ndarray:
    """Dense (dims..., C) logits; absent coordinates favour the empty class."""
    C = out.logits.num_channels if len(out.logits) else NUM_CLASSES
    dense = np.full(tuple(dims) + (C,), -1e4)
    dense[..., 0] = 0.0
    if len(out.logits):
        dense[tuple(out.logits.coords.T)] = out.logits.feats.data
    return dense


def as_coordset(coords, stride=1) -> CoordSet:
    return CoordSet(np.asarray(coords, dtype=np.int64), stride)
