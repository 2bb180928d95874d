"""Anchor <-> ground-truth matching.

Two strategies: the classic fixed-IoU-threshold rule, and a dynamic
learning-to-match rule that picks each ground truth's positive anchor from a
top-IoU bag by a joint classification/localization quality score. The dynamic
rule here is the hard argmax variant (one positive per gt); there is no
training loop, so the soft likelihood estimator is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box3D, bev_iou_matrix

DEFAULT_BAG_SIZE = 50
DEFAULT_SCORE_WEIGHT = 0.5
IGNORE_IOU = 0.3  # ambiguous band for unselected high-overlap anchors


@dataclass
class AnchorPrediction:
    """Per-anchor network outputs: class probabilities and decoded boxes."""

    cls_scores: np.ndarray  # (n_anchors, n_classes) in [0, 1]
    loc_boxes: list[Box3D]

    def __post_init__(self):
        s = np.asarray(self.cls_scores, dtype=float)
        if s.size and (not np.isfinite(s).all() or s.min() < 0 or s.max() > 1):
            raise ValueError("cls_scores must be finite probabilities in [0, 1]")
        self.cls_scores = s


@dataclass
class AssignmentResult:
    positive: list[tuple[int, int]]  # (anchor_index, gt_index)
    negative: list[int]
    ignored: list[int]
    per_gt_bag: list[list[int]] = field(default_factory=list)

    def label_of(self, anchor_index: int) -> str:
        for a, _ in self.positive:
            if a == anchor_index:
                return "pos"
        if anchor_index in self.ignored:
            return "ign"
        return "neg"


def assign_fixed_iou(anchors: list[Box3D], gts: list[Box3D],
                     pos_thr: float, neg_thr: float,
                     iou: np.ndarray | None = None) -> AssignmentResult:
    """Threshold assignment on max BEV IoU per anchor.

    An anchor is positive to its best gt when that IoU >= pos_thr, negative
    when < neg_thr, ignored in between. Each gt additionally rescues its
    single highest-IoU anchor (ties to the lower anchor index). An optional
    precomputed IoU matrix avoids recomputation.
    """
    if pos_thr < neg_thr:
        raise ValueError(f"pos_thr {pos_thr} < neg_thr {neg_thr}")
    n = len(anchors)
    if not gts:
        return AssignmentResult(positive=[], negative=list(range(n)), ignored=[])
    if iou is None:
        iou = bev_iou_matrix(anchors, gts)
    best_gt = iou.argmax(axis=1)
    best_iou = iou.max(axis=1)

    assigned_gt = np.full(n, -1, dtype=int)
    state = np.zeros(n, dtype=int)  # 0 neg, 1 ign, 2 pos
    state[best_iou >= neg_thr] = 1
    pos_mask = best_iou >= pos_thr
    state[pos_mask] = 2
    assigned_gt[pos_mask] = best_gt[pos_mask]
    # Low-quality rescue: every gt claims its best anchor outright.
    for g in range(len(gts)):
        a = int(iou[:, g].argmax())
        if iou[a, g] > 0.0:
            state[a] = 2
            assigned_gt[a] = g
    positive = [(a, int(assigned_gt[a])) for a in range(n) if state[a] == 2]
    negative = [a for a in range(n) if state[a] == 0]
    ignored = [a for a in range(n) if state[a] == 1]
    return AssignmentResult(positive=positive, negative=negative, ignored=ignored)


def assign_dynamic(anchors: list[Box3D], gts: list[Box3D],
                   predictions: AnchorPrediction,
                   bag_size: int = DEFAULT_BAG_SIZE,
                   score_weight: float = DEFAULT_SCORE_WEIGHT,
                   ignore_iou: float = IGNORE_IOU,
                   iou: np.ndarray | None = None) -> AssignmentResult:
    """Learning-to-match assignment in the BEV frame.

    For each gt, the bag is its top `bag_size` anchors by IoU; within the bag
    the anchor maximizing q = score_weight * cls_score(gt class)
    + (1 - score_weight) * iou becomes the positive. Unselected anchors whose
    best IoU reaches ignore_iou are ignored; everything else is negative.
    Ties break toward the lower anchor index; gts claim positives in index
    order, skipping anchors already claimed.
    """
    if bag_size < 1:
        raise ValueError("bag_size must be >= 1")
    if not 0.0 <= score_weight <= 1.0:
        raise ValueError("score_weight must be in [0, 1]")
    n = len(anchors)
    if n == 0 and gts:
        raise ValueError("no anchors to assign to non-empty ground truth")
    if not gts:
        return AssignmentResult(positive=[], negative=list(range(n)), ignored=[])
    if iou is None:
        iou = bev_iou_matrix(anchors, gts)

    bags: list[list[int]] = []
    positive: list[tuple[int, int]] = []
    claimed: set[int] = set()
    for g, gt in enumerate(gts):
        order = sorted(range(n), key=lambda a: (-iou[a, g], a))
        bag = order[:bag_size]
        bags.append(bag)
        if iou[bag[0], g] <= 0.0:
            continue  # nothing overlaps this gt
        q = [score_weight * predictions.cls_scores[a, gt.class_id]
             + (1.0 - score_weight) * iou[a, g] for a in bag]
        choice = -1
        best_q = -np.inf
        for a, qa in zip(bag, q):
            if a in claimed:
                continue
            if qa > best_q:
                best_q, choice = qa, a
        if choice >= 0:
            positive.append((choice, g))
            claimed.add(choice)

    best_iou = iou.max(axis=1) if len(gts) else np.zeros(n)
    negative, ignored = [], []
    for a in range(n):
        if a in claimed:
            continue
        if best_iou[a] >= ignore_iou:
            ignored.append(a)
        else:
            negative.append(a)
    return AssignmentResult(positive=positive, negative=negative,
                            ignored=ignored, per_gt_bag=bags)
