"""Pixel-level detection metrics and k-fold cross-validation helpers."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

UNDEFINED = None  # marker for 0/0 metrics; serializes to JSON null


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass
class MetricsReport:
    miou: object
    recall: object
    precision: object
    f1: object
    per_class_iou: list
    counts: ConfusionCounts
    n_images: int = 1
    per_image: list = field(default_factory=list)

    @property
    def undefined_fields(self):
        return [k for k in ("miou", "recall", "precision", "f1") if getattr(self, k) is UNDEFINED]

    def to_dict(self):
        d = {
            "miou": self.miou,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "per_class_iou": list(self.per_class_iou),
            "counts": self.counts.to_dict(),
            "n_images": self.n_images,
            "undefined_fields": self.undefined_fields,
        }
        if self.per_image:
            d["per_image"] = [r.to_dict() for r in self.per_image]
        return d


def confusion(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in size")
    p = pred.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num, den):
    return UNDEFINED if den == 0 else num / den


def compute_metrics(counts, n_images=1):
    if counts.total <= 0:
        raise ValueError("no pixels counted")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    iou_t = _ratio(tp, tp + fp + fn)
    iou_b = _ratio(tn, tn + fp + fn)
    defined = [v for v in (iou_b, iou_t) if v is not UNDEFINED]
    miou = sum(defined) / len(defined) if len(defined) == 2 else UNDEFINED
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    if recall is UNDEFINED or precision is UNDEFINED or recall + precision == 0:
        f1 = UNDEFINED
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(miou, recall, precision, f1, [iou_b, iou_t], counts, n_images)


def kfold_split(n_items, k, seed=0):
    """Seeded shuffle, then k contiguous test folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n_items < k:
        raise ValueError(f"cannot split {n_items} items into {k} folds")
    order = np.random.default_rng(seed).permutation(n_items)
    folds = np.array_split(order, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((sorted(train.tolist()), sorted(test.tolist())))
    return out


def evaluate_masks(preds, truths):
    """Micro-averaged report over paired masks, with per-image reports attached."""
    if len(preds) == 0:
        raise ValueError("nothing to evaluate")
    if len(preds) != len(truths):
        raise ValueError("prediction and truth lists differ in length")
    per = [confusion(p, t) for p, t in zip(preds, truths)]
    total = ConfusionCounts()
    for c in per:
        total = total + c
    report = compute_metrics(total, n_images=len(per))
    report.per_image = [compute_metrics(c) for c in per]
    return report


def evaluate(net, test_set):
    from .segnet import binarize, forward

    if not test_set:
        raise ValueError("test set is empty")
    preds = [binarize(forward(net, item.image)) for item in test_set]
    return evaluate_masks(preds, [item.mask for item in test_set])


def average_reports(reports):
    """Mean of each metric over reports where it is defined.

    Returns (averages dict, undefined counts dict).
    """
    avg, skipped = {}, {}
    for key in ("miou", "recall", "precision", "f1"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not UNDEFINED]
        skipped[key] = len(reports) - len(vals)
        if skipped[key]:
            warnings.warn(f"{key} undefined in {skipped[key]} of {len(reports)} folds; excluded from mean")
        avg[key] = math.fsum(vals) / len(vals) if vals else UNDEFINED
    return avg, skipped
