"""Evaluation: BEV segmentation IoU and center-distance detection AP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import Box3D

DEFAULT_DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class EvalResult:
    seg_iou_per_class: list[float]
    ap_per_class_per_threshold: np.ndarray  # (n_classes, n_thresholds)
    map: float
    classes: list[int] = field(default_factory=list)
    thresholds: tuple[float, ...] = DEFAULT_DISTANCE_THRESHOLDS


def seg_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Binary mask IoU; 1.0 when both masks are empty."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred > 0.5
    g = gt > 0.5
    union = int((p | g).sum())
    if union == 0:
        return 1.0
    return int((p & g).sum()) / union


def seg_iou_per_class(pred: np.ndarray, gt: np.ndarray) -> list[float]:
    """Per-channel IoU for (nx, ny, C) mask stacks."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return [seg_iou(pred[..., c], gt[..., c]) for c in range(pred.shape[-1])]


def _ap_101(scores: np.ndarray, matched: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from per-prediction (score, is-match) pairs."""
    if n_gt == 0:
        return 0.0
    if len(scores) == 0:
        return 0.0
    tp = np.cumsum(matched)
    fp = np.cumsum(~matched)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r - 1e-12
        ap += precision[mask].max() if mask.any() else 0.0
    return ap / 101.0


def center_distance_ap(preds: list[Box3D], gts: list[Box3D],
                       thresholds=DEFAULT_DISTANCE_THRESHOLDS) -> EvalResult:
    """Detection AP with ground-plane center distance as the match criterion.

    Per class and threshold, predictions are taken in descending score order
    (ties to the lower index) and greedily matched to the nearest unmatched
    ground truth of the same class within the threshold. AP uses 101-point
    interpolation; the headline number averages over classes and thresholds.
    """
    classes = sorted({g.class_id for g in gts})
    if not classes:
        classes = sorted({p.class_id for p in preds})
    ap = np.zeros((len(classes), len(thresholds)))
    for ci, cls in enumerate(classes):
        cls_gts = [g for g in gts if g.class_id == cls]
        cls_preds = sorted([(i, p) for i, p in enumerate(preds) if p.class_id == cls],
                           key=lambda ip: (-ip[1].score, ip[0]))
        for ti, thr in enumerate(thresholds):
            taken = [False] * len(cls_gts)
            matched = np.zeros(len(cls_preds), dtype=bool)
            for k, (_, p) in enumerate(cls_preds):
                best, best_d = -1, math.inf
                for j, g in enumerate(cls_gts):
                    if taken[j]:
                        continue
                    d = math.hypot(p.x - g.x, p.y - g.y)
                    if d <= thr and d < best_d:
                        best, best_d = j, d
                if best >= 0:
                    taken[best] = True
                    matched[k] = True
            scores = np.array([p.score for _, p in cls_preds])
            ap[ci, ti] = _ap_101(scores, matched, len(cls_gts))
    mean_ap = float(ap.mean()) if ap.size else 0.0
    return EvalResult(seg_iou_per_class=[], ap_per_class_per_threshold=ap,
                      map=mean_ap, classes=classes, thresholds=tuple(thresholds))
