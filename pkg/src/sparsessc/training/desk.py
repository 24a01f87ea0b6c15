"""Desk-scale overfit runs on a handful of synthetic scenes."""
from __future__ import annotations

import time

from ..features import extract_features
from ..scene_io import generate_synthetic_scene, random_scene_spec
from .config import preset
from .trainer import JsonLog, Sample, Trainer, feature_config


def desk_samples(cfg, n: int = 5, seed: int = 0) -> list[Sample]:
    g = cfg.geometry.grid()
    out = []
    for i in range(n):
        pc, grid = generate_synthetic_scene(random_scene_spec(seed + i, g), seed + i)
        f = extract_features(pc, feature_config(cfg))
        out.append(Sample(f"scene_{i:03d}", grid, f.x3d, f.x2d, pc))
    return out


def overfit(kind: str, epochs: int = 300, eval_every: int = 10, budget: float = 1800.0,
            targets=None, seed: int = 0, echo=print):
    """Train until the targets are met, the epoch limit or the time budget.

    Returns (epochs run, seconds, last IouResult).
    """
    cfg = preset(f"desk-{kind}").with_values(train=dict(epochs=epochs, eval_every=eval_every, seed=seed))
    trainer = Trainer(cfg, desk_samples(cfg), JsonLog())
    targets = targets or {}
    start = time.perf_counter()
    best = None
    for epoch in range(epochs):
        trainer.train_epoch()
        if (epoch + 1) % eval_every == 0 or epoch + 1 == epochs:
            r = trainer.evaluate()
            elapsed = time.perf_counter() - start
            if echo:
                echo(f"{kind} epoch {epoch + 1:4d}  {elapsed:7.1f}s  mIoU {r.mean:.4f}  "
                     f"completion {r.completion:.4f}")
            best = (epoch + 1, elapsed, r)
            met = bool(targets) and all(getattr(r, k) >= v for k, v in targets.items())
            if met or elapsed > budget:
                break
    return best
