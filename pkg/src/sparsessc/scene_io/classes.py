"""Semantic classes and the raw-to-train ID map."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

NUM_CLASSES = 20

# train ID -> name; 0 is empty space
CLASS_NAMES = (
    "empty", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist",
    "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building", "fence",
    "vegetation", "trunk", "terrain", "pole", "traffic-sign",
)
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

# column order of the published per-class benchmark table
REPORT_ORDER = tuple(CLASS_IDS[n] for n in (
    "road", "sidewalk", "parking", "other-ground", "building", "car", "truck", "bicycle",
    "motorcycle", "other-vehicle", "vegetation", "trunk", "terrain", "person", "bicyclist",
    "motorcyclist", "fence", "pole", "traffic-sign",
))


@dataclass(frozen=True)
class ClassMap:
    """Lookup tables between raw dataset IDs and contiguous train IDs."""

    to_train: np.ndarray  # raw id -> train id, -1 where unmapped
    to_raw: np.ndarray  # train id -> canonical raw id

    def remap(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.int64)
        out = np.full(raw.shape, -1, dtype=np.int64)
        inside = raw < len(self.to_train)
        out[inside] = self.to_train[raw[inside]]
        return out

    def unknown(self, raw: np.ndarray) -> list[int]:
        bad = self.remap(raw) < 0
        return sorted(int(v) for v in np.unique(np.asarray(raw)[bad]))


def parse_class_map(text: str) -> ClassMap:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"class map line {lineno}: expected 'raw_id train_id name'")
        raw, train = int(parts[0]), int(parts[1])
        if not 0 <= train < NUM_CLASSES:
            raise ValueError(f"class map line {lineno}: train id {train} out of range")
        pairs.append((raw, train))
    size = max(r for r, _ in pairs) + 1
    to_train = np.full(size, -1, dtype=np.int64)
    to_raw = np.full(NUM_CLASSES, -1, dtype=np.int64)
    for raw, train in pairs:
        to_train[raw] = train
        if to_raw[train] < 0:
            to_raw[train] = raw
    to_raw[to_raw < 0] = 0
    return ClassMap(to_train, to_raw)


def load_class_map(path: str | Path | None = None) -> ClassMap:
    if path is None:
        text = resources.files("sparsessc").joinpath("data/semantic_kitti_classes.txt").read_text()
    else:
        text = Path(path).read_text()
    return parse_class_map(text)
