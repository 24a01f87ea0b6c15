"""Dataset loading, loss assembly and the epoch loop."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DivergenceError, FormatError
from ..features import FeatureConfig, extract_features
from ..geometry import ProjectionConfig
from ..losses import (LossConfig2D, LossConfig3D, class_weights_from_counts, completion_terms,
                      ga_weights, loss_2d, loss_3d)
from ..metrics import IouResult, confusion_matrix, iou_from_confusion
from ..network import (BlockConfig, NetOutput, CompletionNet, ScaleTargets, bev_labels, labels_to_grid,
                        make_scale_targets)
from ..scene_io import (AugmentationParams, DenseLabelGrid, PointCloud, augment, read_label_grid,
                        read_scan, transform_label_grid)
from ..sparse import autograd as ag
from ..sparse.autograd import Tape
from ..sparse.tensor import SparseTensor
from ..sparse.tensor_io import read_tensor
from .config import RunConfig
from .optim import ExponentialSchedule, Optimizer


def feature_config(cfg: RunConfig) -> FeatureConfig:
    f = cfg.features
    proj = ProjectionConfig(f.height, f.width, f.fov_up, f.fov_down)
    return FeatureConfig(geometry=cfg.geometry.grid(), projection=proj, tau=f.tau,
                         use_intensity=f.use_intensity)


def block_config(cfg: RunConfig, network: str | None = None) -> BlockConfig:
    network = network or cfg.train.network
    n = cfg.net
    dims = tuple(int(v) for v in cfg.geometry.dims)
    common = dict(channels=tuple(n.channels), aspp_rates=tuple(n.aspp_rates), cam_kernel=n.cam_kernel,
                  reduction=n.reduction, spn_iterations=n.spn_iterations, spn_hidden=n.spn_hidden,
                  seed=cfg.train.seed)
    if network == "3d":
        return BlockConfig(dim=3, in_channels=6, grid_dims=dims, **common)
    return BlockConfig(dim=2, in_channels=7, grid_dims=dims[:2], **common)


def build_network(cfg: RunConfig, network: str | None = None) -> CompletionNet:
    return CompletionNet(block_config(cfg, network))


# ------------------------------------------------------------------ data

@dataclass(eq=False)
class Sample:
    name: str
    grid: DenseLabelGrid
    x3d: SparseTensor | None = None
    x2d: SparseTensor | None = None
    pc: PointCloud | None = None
    cache: dict = field(default_factory=dict)

    def targets_3d(self) -> ScaleTargets:
        if "t3" not in self.cache:
            self.cache["t3"] = make_scale_targets(self.grid)
        return self.cache["t3"]

    def bev(self):
        """(BEV labels, BEV invalid mask)."""
        if "bev" not in self.cache:
            lab = np.where(self.grid.invalid, 0, self.grid.labels)
            self.cache["bev"] = (bev_labels(lab), self.grid.invalid.all(axis=2))
        return self.cache["bev"]

    def targets_2d(self) -> ScaleTargets:
        if "t2" not in self.cache:
            b, inv = self.bev()
            self.cache["t2"] = make_scale_targets(b > 0, inv)
        return self.cache["t2"]


def scene_names(root) -> list[str]:
    return sorted(p.name[:-len(".bin")] for p in Path(root).glob("*.bin"))


def load_dataset(root, cfg: RunConfig) -> list[Sample]:
    """Scenes ``<name>.bin`` with ``<name>.label`` (+ optional ``<name>.invalid``).

    Preprocessed ``<name>.x3d.sst`` / ``<name>.x2d.sst`` tensors are used when
    present; otherwise features are computed from the scan.
    """
    root = Path(root)
    geom = cfg.geometry.grid()
    names = scene_names(root)
    if not names:
        raise FormatError(f"{root}: no scenes (*.bin) found")
    fcfg = feature_config(cfg)
    out = []
    for name in names:
        label = root / f"{name}.label"
        if not label.exists():
            raise FormatError(f"{label}: missing label grid")
        invalid = root / f"{name}.invalid"
        grid = read_label_grid(label, invalid if invalid.exists() else None, geom)
        pc = read_scan(root / f"{name}.bin")
        s = Sample(name, grid, pc=pc)
        t3, t2 = root / f"{name}.x3d.sst", root / f"{name}.x2d.sst"
        if t3.exists() and t2.exists():
            s.x3d, s.x2d = read_tensor(t3), read_tensor(t2)
        else:
            feats = extract_features(pc, fcfg)
            s.x3d, s.x2d = feats.x3d, feats.x2d
        out.append(s)
    return out


# ---------------------------------------------------------------- losses

def loss_for_3d(out: NetOutput, grid: DenseLabelGrid, targets: ScaleTargets, cfg: RunConfig):
    comp = completion_terms(out.scores, targets)
    logits = out.logits
    coords = logits.coords
    rows = np.flatnonzero(targets.valid_at(coords)) if len(coords) else np.zeros(0, np.int64)
    y = grid.labels[tuple(coords[rows].T)].astype(np.int64) if len(rows) else np.zeros(0, np.int64)
    pred = labels_to_grid(out, grid.dims)
    w = ga_weights(pred, coords[rows]) if len(rows) else np.zeros(0)
    feats = ag.take_rows(logits.feats, rows) if len(rows) else logits.feats
    return loss_3d(feats, y, w, comp, LossConfig3D(cfg.loss.lam))


def loss_for_2d(out: NetOutput, bev: np.ndarray, targets: ScaleTargets, cfg: RunConfig,
                class_weights=None):
    comp = completion_terms(out.scores, targets)
    logits = out.logits
    coords = logits.coords
    rows = np.flatnonzero(targets.valid_at(coords)) if len(coords) else np.zeros(0, np.int64)
    y = bev[tuple(coords[rows].T)].astype(np.int64) if len(rows) else np.zeros(0, np.int64)
    feats = ag.take_rows(logits.feats, rows) if len(rows) else logits.feats
    L = cfg.loss
    lc = LossConfig2D(L.alpha, L.beta, L.omega, L.gamma,
                      None if class_weights is None else tuple(class_weights))
    return loss_2d(feats, y, comp, lc)


# ---------------------------------------------------------------- trainer

class JsonLog:
    """Structured log: one JSON object per line, keys in a fixed order."""

    def __init__(self, path=None, echo=None):
        self.fh = open(path, "w") if path else None
        self.echo = echo
        self.lines: list[dict] = []

    def __call__(self, **record):
        self.lines.append(record)
        text = json.dumps(record)
        if self.fh:
            self.fh.write(text + "\n")
            self.fh.flush()
        if self.echo:
            self.echo(text)

    def close(self):
        if self.fh:
            self.fh.close()


def _finite(*arrays) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


class Trainer:
    def __init__(self, cfg: RunConfig, samples: list[Sample], log: JsonLog | None = None,
                 net: CompletionNet | None = None):
        self.cfg = cfg
        self.kind = cfg.train.network
        self.samples = samples
        self.log = log or JsonLog()
        self.net = net or build_network(cfg)
        t = cfg.train
        self.opt = Optimizer(self.net.parameters(), t.optimizer, t.momentum, t.betas, t.weight_decay)
        self.schedule = ExponentialSchedule(t.lr, t.decay, t.decay_every)
        self.rng = np.random.default_rng(t.seed)
        self.class_weights = None
        if self.kind == "2d" and cfg.loss.class_weights:
            counts = np.zeros(20)
            for s in samples:
                b, inv = s.bev()
                counts += np.bincount(b[~inv].ravel(), minlength=20)[:20]
            self.class_weights = class_weights_from_counts(counts)
        self.epoch = 0

    # one scene
    def _inputs(self, s: Sample, epoch: int, index: int):
        aug = self.cfg.augment
        if not aug.enabled or s.pc is None:
            return s, (s.x3d if self.kind == "3d" else s.x2d)
        params = AugmentationParams(aug.crop_fraction, aug.dropout_prob, aug.translation_range,
                                    aug.rotation_deg_3d, aug.rotation_deg_2d,
                                    seed=int(self.cfg.train.seed * 1_000_003 + epoch * 1009 + index))
        pc, tf = augment(s.pc, params, "3D" if self.kind == "3d" else "2D")
        g = self.cfg.geometry.grid()
        lab, inv = transform_label_grid(s.grid.labels, s.grid.invalid, g, tf.matrix)
        feats = extract_features(pc, feature_config(self.cfg))
        moved = Sample(s.name, DenseLabelGrid(lab, inv, g))
        return moved, (feats.x3d if self.kind == "3d" else feats.x2d)

    def loss(self, s: Sample, x: SparseTensor):
        out = self.net(x, s.targets_3d() if self.kind == "3d" else s.targets_2d())
        if self.kind == "3d":
            return loss_for_3d(out, s.grid, s.targets_3d(), self.cfg)
        return loss_for_2d(out, s.bev()[0], s.targets_2d(), self.cfg, self.class_weights)

    def train_epoch(self) -> float:
        epoch = self.epoch
        lr = self.schedule(epoch)
        params = self.net.parameters()
        order = self.rng.permutation(len(self.samples))
        acc = None
        pending = 0
        losses = []
        self.net.train()
        for step, idx in enumerate(order):
            s, x = self._inputs(self.samples[idx], epoch, int(idx))
            with Tape() as tape:
                terms = self.loss(s, x)
            value = terms.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch} step {step} ({s.name})")
            grads = tape.gradient(terms.total, params)
            if not _finite(*grads):
                raise DivergenceError(f"non-finite gradient at epoch {epoch} step {step} ({s.name})")
            acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
            pending += 1
            if pending == self.cfg.train.accumulate or step == len(order) - 1:
                self.opt.step([a / pending for a in acc], lr)
                acc, pending = None, 0
            losses.append(value)
            if self.cfg.train.log_every and step % self.cfg.train.log_every == 0:
                self.log(epoch=epoch, step=step, scene=s.name, lr=lr, loss=value,
                         **{k: float(v) for k, v in terms.parts.items()})
        self.epoch += 1
        return float(np.mean(losses)) if losses else 0.0

    def evaluate(self, samples: list[Sample] | None = None) -> IouResult:
        """Pooled confusion over the given scenes with the network in eval mode."""
        self.net.eval()
        try:
            return evaluate_net(self.net, self.samples if samples is None else samples, self.kind)
        finally:
            self.net.train()

    def fit(self, epochs: int | None = None, time_budget: float | None = None, stop=None):
        """Run epochs; ``stop(result)`` may end training early after an evaluation."""
        epochs = self.cfg.train.epochs if epochs is None else epochs
        start = time.perf_counter()
        history = []
        for _ in range(epochs):
            mean = self.train_epoch()
            rec = {"epoch": self.epoch - 1, "mean_loss": mean}
            ev = self.cfg.train.eval_every
            if ev and self.epoch % ev == 0:
                r = self.evaluate()
                rec.update(miou=r.mean, completion=r.completion)
                if stop is not None and stop(r):
                    history.append(rec)
                    self.log(**rec)
                    break
            history.append(rec)
            self.log(**rec)
            if time_budget is not None and time.perf_counter() - start > time_budget:
                break
        return history


def predict_sample(net: CompletionNet, s: Sample, kind: str):
    """(prediction, ground truth, invalid mask) for one scene."""
    if kind == "3d":
        out = net(s.x3d)
        return labels_to_grid(out, s.grid.dims), s.grid.labels, s.grid.invalid
    out = net(s.x2d)
    b, inv = s.bev()
    return labels_to_grid(out, b.shape), b, inv


def evaluate_net(net: CompletionNet, samples, kind: str) -> IouResult:
    cm = np.zeros((20, 20), dtype=np.int64)
    for s in samples:
        pred, gt, inv = predict_sample(net, s, kind)
        cm += confusion_matrix(pred, gt, inv)
    return iou_from_confusion(cm)


__all__ = ["Trainer", "Sample", "JsonLog", "load_dataset", "build_network", "block_config",
           "feature_config", "loss_for_3d", "loss_for_2d", "predict_sample", "evaluate_net"]
