"""Dice and IOU evaluation from pixel-wise confusion counts."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class ConfusionAccumulator:
    """Per-class running TP/FP/FN counts; mergeable across workers."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.tp = np.zeros(num_classes, dtype=np.int64)
        self.fp = np.zeros(num_classes, dtype=np.int64)
        self.fn = np.zeros(num_classes, dtype=np.int64)
        self.pixels = 0

    def update(self, pred_mask, target_mask) -> "ConfusionAccumulator":
        pred = np.asarray(pred_mask)
        tgt = np.asarray(target_mask)
        if pred.shape != tgt.shape:
            raise ShapeError(
                f"confusion update: shapes {pred.shape} vs {tgt.shape}"
            )
        for arr, label in ((pred, "prediction"), (tgt, "target")):
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise ValueError(
                    f"confusion update: {label} class id out of range "
                    f"[0, {self.num_classes})"
                )
        c = self.num_classes
        joint = np.bincount(tgt.ravel() * c + pred.ravel(), minlength=c * c).reshape(c, c)
        tp = np.diag(joint)
        self.tp += tp
        self.fp += joint.sum(axis=0) - tp
        self.fn += joint.sum(axis=1) - tp
        self.pixels += pred.size
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge accumulators with different class counts")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.pixels += other.pixels
        return self

    def _check_nonempty(self):
        if self.pixels == 0:
            raise ValueError("empty accumulator")

    def present(self):
        """Classes with a nonzero Dice/IOU denominator."""
        return (self.tp + self.fp + self.fn) > 0

    def dice_per_class(self):
        self._check_nonempty()
        denom = 2 * self.tp + self.fp + self.fn
        with np.errstate(invalid="ignore"):
            return np.where(denom > 0, 2 * self.tp / np.maximum(denom, 1), 0.0)

    def iou_per_class(self):
        self._check_nonempty()
        denom = self.tp + self.fp + self.fn
        with np.errstate(invalid="ignore"):
            return np.where(denom > 0, self.tp / np.maximum(denom, 1), 0.0)

    def _mean(self, values, present_only, include_background):
        mask = self.present() if present_only else np.ones(self.num_classes, bool)
        if not include_background:
            mask = mask.copy()
            mask[0] = False
        if not mask.any():
            return 0.0
        return float(values[mask].mean())

    def mean_dice(self, present_only=True, include_background=False):
        return self._mean(self.dice_per_class(), present_only, include_background)

    def mean_iou(self, present_only=True, include_background=False):
        return self._mean(self.iou_per_class(), present_only, include_background)

    def report(self, class_names=None, present_only=True, include_background=False):
        """JSON-ready metrics summary."""
        self._check_nonempty()
        dice = self.dice_per_class()
        iou = self.iou_per_class()
        names = class_names or [f"class_{i}" for i in range(self.num_classes)]
        return {
            "pixels": int(self.pixels),
            "per_class": [
                {
                    "name": names[i],
                    "dice": float(dice[i]),
                    "iou": float(iou[i]),
                    "tp": int(self.tp[i]),
                    "fp": int(self.fp[i]),
                    "fn": int(self.fn[i]),
                }
                for i in range(self.num_classes)
            ],
            "mean_dice": self.mean_dice(present_only, include_background),
            "mean_iou": self.mean_iou(present_only, include_background),
            "present_only": present_only,
            "include_background": include_background,
        }


def update_confusion(acc, pred_mask, target_mask):
    return acc.update(pred_mask, target_mask)
