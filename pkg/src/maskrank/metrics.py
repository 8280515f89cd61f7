"""Per-class IoU, seen/unseen mIoU and their harmonic mean."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ShapeError

IGNORE_INDEX = 255


def confusion_matrix(pred, gt, num_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Integer C x C matrix, rows = gt class, cols = predicted class."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    gt = gt.astype(np.int64).ravel()
    pred = pred.astype(np.int64).ravel()
    keep = (gt != ignore_index) & (gt >= 0) & (gt < num_classes)
    keep &= (pred >= 0) & (pred < num_classes)
    idx = gt[keep] * num_classes + pred[keep]
    return np.bincount(idx, minlength=num_classes**2).reshape(num_classes, num_classes)


@dataclass(frozen=True)
class ClassIoU:
    iou: np.ndarray  # length C; 0 where absent
    present: np.ndarray  # bool, class occurs in pred or gt


def iou_from_confusion(cm: np.ndarray) -> ClassIoU:
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=present)
    return ClassIoU(iou, present)


def iou_per_class(pred, gt, num_classes: int, ignore_index: int = IGNORE_INDEX) -> ClassIoU:
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_index))


def partitioned_miou(per_class, seen_mask, present=None) -> tuple[float | None, float | None]:
    """Mean IoU over present seen classes and over present unseen classes.

    A partition with no present class yields ``None`` rather than 0.
    """
    if isinstance(per_class, ClassIoU):
        per_class, present = per_class.iou, per_class.present
    iou = np.asarray(per_class, dtype=np.float64)
    seen = np.asarray(seen_mask, dtype=bool)
    if iou.shape != seen.shape:
        raise ShapeError(f"{iou.size} IoUs but seen mask of length {seen.size}")
    present = np.ones_like(seen) if present is None else np.asarray(present, dtype=bool)

    def _mean(sel):
        return float(iou[sel].mean()) if sel.any() else None

    return _mean(seen & present), _mean(~seen & present)


def hiou(miou_seen: float, miou_unseen: float) -> float:
    if miou_seen <= 0 or miou_unseen <= 0:
        return 0.0
    return 2.0 * miou_seen * miou_unseen / (miou_seen + miou_unseen)


@dataclass(frozen=True)
class IoUReport:
    per_class_iou: np.ndarray
    present: np.ndarray
    miou_seen: float | None
    miou_unseen: float | None
    hiou: float | None

    def to_json(self) -> dict:
        return {
            "per_class_iou": [round(float(x), 12) for x in self.per_class_iou],
            "present": [bool(x) for x in self.present],
            "miou_seen": self.miou_seen,
            "miou_unseen": self.miou_unseen,
            "hiou": self.hiou,
        }


def report_from_confusion(cm: np.ndarray, seen_mask) -> IoUReport:
    ci = iou_from_confusion(cm)
    ms, mu = partitioned_miou(ci, seen_mask)
    h = None if ms is None or mu is None else hiou(ms, mu)
    return IoUReport(ci.iou, ci.present, ms, mu, h)


def evaluate(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    num_classes: int,
    seen_mask,
    ignore_index: int = IGNORE_INDEX,
) -> IoUReport:
    """Accumulate one confusion matrix over (pred, gt) label maps and summarise it."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, gt in pairs:
        cm += confusion_matrix(pred, gt, num_classes, ignore_index)
    return report_from_confusion(cm, seen_mask)
