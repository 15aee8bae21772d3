"""Semantic mIoU and instance mAP@50 scoring.

mIoU: per-category intersection-over-union of per-point semantic labels,
averaged over categories present in either prediction or ground truth.
Points without a ground-truth label are ignored.

mAP@50: per category, predictions sorted by descending confidence are
greedily matched to the unmatched ground-truth instance with the highest
point-set IoU; a prediction is a true positive iff that IoU is at least
0.5. AP is the area under the precision-recall curve with all-points
interpolation, averaged over categories that have ground-truth instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grouping import InstanceSegmentation

IOU_THRESHOLD = 0.5
NO_LABEL = -1


@dataclass
class EvalReport:
    per_category_iou: dict[int, float]
    miou: float
    per_category_ap: dict[int, float]
    map50: float
    pred_counts: dict[int, int]
    gt_counts: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "map50": self.map50,
            "per_category_iou": {str(k): v for k, v in sorted(self.per_category_iou.items())},
            "per_category_ap": {str(k): v for k, v in sorted(self.per_category_ap.items())},
            "pred_instances": {str(k): v for k, v in sorted(self.pred_counts.items())},
            "gt_instances": {str(k): v for k, v in sorted(self.gt_counts.items())},
        }

    def to_text(self) -> str:
        cats = sorted(set(self.per_category_iou) | set(self.per_category_ap))
        lines = [f"{'category':>10} {'IoU':>8} {'AP@50':>8} {'#pred':>6} {'#gt':>6}"]
        for c in cats:
            iou = self.per_category_iou.get(c)
            ap = self.per_category_ap.get(c)
            lines.append(
                f"{c:>10} "
                f"{'-' if iou is None else format(iou, '.4f'):>8} "
                f"{'-' if ap is None else format(ap, '.4f'):>8} "
                f"{self.pred_counts.get(c, 0):>6} {self.gt_counts.get(c, 0):>6}"
            )
        lines.append(f"{'mean':>10} {self.miou:>8.4f} {self.map50:>8.4f}")
        return "\n".join(lines)


def miou(
    pred: np.ndarray, gt: np.ndarray, categories: list[int] | None = None
) -> tuple[dict[int, float], float]:
    """Per-category IoU of per-point semantic labels plus their mean.

    Points with gt == NO_LABEL are excluded entirely. Categories appearing
    in neither side are excluded from the mean; categories argument widens
    (never narrows) the evaluated set.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt label arrays differ in length")
    keep = gt != NO_LABEL
    pred = pred[keep]
    gt = gt[keep]
    present = set(np.unique(pred[pred != NO_LABEL]).tolist()) | set(np.unique(gt).tolist())
    if categories is not None:
        present |= {c for c in categories}
    per_cat: dict[int, float] = {}
    for c in sorted(present):
        p = pred == c
        g = gt == c
        union = int(np.sum(p | g))
        if union == 0:
            continue
        per_cat[c] = float(np.sum(p & g) / union)
    mean = float(np.mean(list(per_cat.values()))) if per_cat else 0.0
    return per_cat, mean


def _instance_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.intersect1d(a, b, assume_unique=True).size
    if inter == 0:
        return 0.0
    return inter / (a.size + b.size - inter)


def average_precision(tp_flags: list[bool], n_gt: int) -> float:
    """All-points interpolated AP from per-prediction true-positive flags
    in confidence order."""
    if n_gt == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    # envelope: precision at recall r is the max precision at recall >= r
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def map50(
    pred: InstanceSegmentation,
    gt: InstanceSegmentation,
    categories: list[int] | None = None,
) -> tuple[dict[int, float], float]:
    """Per-category AP@50 plus the mean over categories with ground truth."""
    cats = sorted(
        {inst.category for inst in gt.instances}
        | ({c for c in categories} if categories else set())
    )
    per_cat: dict[int, float] = {}
    for c in cats:
        gt_members = [inst.points for inst in gt.instances if inst.category == c]
        if not gt_members:
            continue
        preds = [
            (inst.confidence, i, inst.points)
            for i, inst in enumerate(pred.instances)
            if inst.category == c
        ]
        preds.sort(key=lambda t: (-t[0], t[1]))
        taken = np.zeros(len(gt_members), dtype=bool)
        flags: list[bool] = []
        for _, _, pts in preds:
            best_iou, best_g = 0.0, -1
            for g, gpts in enumerate(gt_members):
                if taken[g]:
                    continue
                iou = _instance_iou(pts, gpts)
                if iou > best_iou:
                    best_iou, best_g = iou, g
            if best_iou >= IOU_THRESHOLD:
                taken[best_g] = True
                flags.append(True)
            else:
                flags.append(False)
        per_cat[c] = average_precision(flags, len(gt_members))
    mean = float(np.mean(list(per_cat.values()))) if per_cat else 0.0
    return per_cat, mean


def evaluate(
    pred: InstanceSegmentation,
    gt: InstanceSegmentation,
    pred_semantics: np.ndarray | None = None,
    gt_semantics: np.ndarray | None = None,
    categories: list[int] | None = None,
) -> EvalReport:
    """Full report; semantic labels default to instance-derived categories."""
    if pred_semantics is None:
        pred_semantics = pred.point_categories()
    if gt_semantics is None:
        gt_semantics = gt.point_categories()
    per_iou, mean_iou = miou(pred_semantics, gt_semantics, categories)
    per_ap, mean_ap = map50(pred, gt, categories)
    pred_counts: dict[int, int] = {}
    for inst in pred.instances:
        pred_counts[inst.category] = pred_counts.get(inst.category, 0) + 1
    gt_counts: dict[int, int] = {}
    for inst in gt.instances:
        gt_counts[inst.category] = gt_counts.get(inst.category, 0) + 1
    return EvalReport(
        per_category_iou=per_iou,
        miou=mean_iou,
        per_category_ap=per_ap,
        map50=mean_ap,
        pred_counts=pred_counts,
        gt_counts=gt_counts,
    )


def save_report(path, report: EvalReport) -> None:
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
