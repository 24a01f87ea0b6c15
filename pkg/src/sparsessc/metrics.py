"""Semantic and completion IoU from a confusion matrix, plus report formatting."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .scene_io.classes import CLASS_NAMES, NUM_CLASSES, REPORT_ORDER


def confusion_matrix(pred, gt, invalid=None, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """counts[g, p] over voxels not marked invalid."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction size {pred.size} != ground truth size {gt.size}")
    if invalid is not None:
        keep = ~np.asarray(invalid, dtype=bool).ravel()
        pred, gt = pred[keep], gt[keep]
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(
        num_classes, num_classes)


@dataclass(frozen=True)
class IouResult:
    per_class: np.ndarray  # IoU per class ID 1..C-1 at index c; nan where the class is absent
    mean: float
    completion: float

    def row(self) -> list[float]:
        return [float(self.per_class[c]) for c in REPORT_ORDER]


def iou_from_confusion(cm: np.ndarray) -> IouResult:
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    per = np.full(len(cm), np.nan)
    present = union > 0
    per[present] = tp[present] / union[present]
    per[0] = np.nan
    pos = per[1:]
    seen = pos[np.isfinite(pos)]
    # correctly rounded sum, independent of summation order
    mean = math.fsum(seen.tolist()) / len(seen) if len(seen) else 1.0
    # occupancy: class 0 is empty, everything else occupied
    inter = cm[1:, 1:].sum()
    occ_union = cm[1:, :].sum() + cm[:, 1:].sum() - inter
    comp = float(inter / occ_union) if occ_union > 0 else 1.0
    return IouResult(per, mean, comp)


def miou(pred, gt, invalid=None) -> tuple[np.ndarray, float]:
    """Per-class IoU over classes 1..19 and their mean over classes seen in gt or pred."""
    r = iou_from_confusion(confusion_matrix(pred, gt, invalid))
    return r.per_class, r.mean


def completion_iou(pred, gt, invalid=None) -> float:
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    if invalid is not None:
        keep = ~np.asarray(invalid, dtype=bool)
        pred, gt = pred[keep], gt[keep]
    union = np.count_nonzero(pred | gt)
    return float(np.count_nonzero(pred & gt) / union) if union else 1.0


def evaluate(pred, gt, invalid=None) -> IouResult:
    return iou_from_confusion(confusion_matrix(pred, gt, invalid))


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"


def format_report(result: IouResult, fmt: str = "text") -> str:
    """Per-class IoU table in benchmark column order plus mean and completion IoU."""
    names = [CLASS_NAMES[c] for c in REPORT_ORDER]
    values = result.row()
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(",".join(["completion", "miou"] + names) + "\n")
        buf.write(",".join(_fmt(v) for v in [result.completion, result.mean] + values) + "\n")
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    width = max(len(n) for n in names)
    lines = [f"{'completion IoU':<{width}}  {_fmt(result.completion)}",
             f"{'mean IoU':<{width}}  {_fmt(result.mean)}"]
    lines += [f"{n:<{width}}  {_fmt(v)}" for n, v in zip(names, values)]
    return "\n".join(lines) + "\n"
