"""Loss kernels for the detection and segmentation heads.

Every differentiable loss comes with an analytic gradient, checked against
central finite differences in the test suite (and by `bevkit loss-check`).
All kernels are pure functions of plain floats / numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DICE_EPS = 1.0
DEFAULT_FOCAL_ALPHA = 0.25
DEFAULT_FOCAL_GAMMA = 2.0
DEFAULT_SMOOTH_L1_BETA = 1.0 / 9.0

# Per-dimension weights for (x, y, z, w, h, l, theta, vx, vy) regression.
BOX_DIM_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.2)


@dataclass(frozen=True)
class LossWeights:
    beta_cls: float = 1.0
    beta_loc: float = 0.8
    beta_dir: float = 0.8
    beta_dice: float = 1.0
    beta_bce: float = 1.0
    box_dim_weights: tuple[float, ...] = BOX_DIM_WEIGHTS
    # Per-task weights on the three summands of the total loss.
    w_det3d: float = 1.0
    w_seg3d: float = 1.0
    w_det2d: float = 1.0

    def __post_init__(self):
        vals = (self.beta_cls, self.beta_loc, self.beta_dir, self.beta_dice,
                self.beta_bce, self.w_det3d, self.w_seg3d, self.w_det2d,
                *self.box_dim_weights)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    total: float
    det3d: float
    seg3d: float
    det2d: float
    n_pos: int


def focal_loss(p: float, target: int, alpha: float = DEFAULT_FOCAL_ALPHA,
               gamma: float = DEFAULT_FOCAL_GAMMA) -> float:
    """Focal loss -alpha_t * (1 - p_t)^gamma * log(p_t).

    alpha weights the positive class, (1 - alpha) the negative one; gamma=0
    reduces to alpha-weighted cross-entropy.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if target == 1:
        pt, at = p, alpha
    else:
        pt, at = 1.0 - p, 1.0 - alpha
    return -at * (1.0 - pt) ** gamma * math.log(pt)


def focal_loss_grad(p: float, target: int, alpha: float = DEFAULT_FOCAL_ALPHA,
                    gamma: float = DEFAULT_FOCAL_GAMMA) -> float:
    """d focal_loss / d p."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if target == 1:
        pt, at, sign = p, alpha, 1.0
    else:
        pt, at, sign = 1.0 - p, 1.0 - alpha, -1.0
    # d/dpt of -at*(1-pt)^g*log(pt); chain rule sign for target 0.
    g = at * (gamma * (1.0 - pt) ** (gamma - 1.0) * math.log(pt)
              - (1.0 - pt) ** gamma / pt)
    return sign * g


def huber(d: float, beta: float) -> float:
    ad = abs(d)
    if ad < beta:
        return 0.5 * d * d / beta
    return ad - 0.5 * beta


def huber_grad(d: float, beta: float) -> float:
    if abs(d) < beta:
        return d / beta
    return math.copysign(1.0, d)


def smooth_l1_box(pred, target, dim_weights=BOX_DIM_WEIGHTS,
                  beta: float = DEFAULT_SMOOTH_L1_BETA) -> float:
    """Weighted Smooth-L1 over the 9 box regression dimensions."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return sum(w * huber(float(p) - float(t), beta)
               for p, t, w in zip(pred, target, dim_weights, strict=True))


def smooth_l1_box_grad(pred, target, dim_weights=BOX_DIM_WEIGHTS,
                       beta: float = DEFAULT_SMOOTH_L1_BETA) -> np.ndarray:
    """Gradient w.r.t. pred."""
    return np.array([w * huber_grad(float(p) - float(t), beta)
                     for p, t, w in zip(pred, target, dim_weights, strict=True)])


def direction_loss(pred_logit: float, target_bin: int) -> float:
    """Binary cross-entropy on the heading-flip bin, log-sum-exp stabilized."""
    x = float(pred_logit)
    t = float(target_bin)
    # max(x,0) - x*t + log(1 + exp(-|x|))
    return max(x, 0.0) - x * t + math.log1p(math.exp(-abs(x)))


def direction_loss_grad(pred_logit: float, target_bin: int) -> float:
    x = float(pred_logit)
    sigma = 1.0 / (1.0 + math.exp(-x))
    return sigma - float(target_bin)


def direction_bin(theta: float) -> int:
    """Heading-flip target: distinguishes theta from theta + pi."""
    return 1 if math.sin(theta) >= 0.0 else 0


def dice_loss(pred: np.ndarray, target: np.ndarray, eps: float = DICE_EPS) -> float:
    """1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    num = 2.0 * float((pred * target).sum()) + eps
    den = float(pred.sum()) + float(target.sum()) + eps
    return 1.0 - num / den


def dice_loss_grad(pred: np.ndarray, target: np.ndarray, eps: float = DICE_EPS) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    num = 2.0 * float((pred * target).sum()) + eps
    den = float(pred.sum()) + float(target.sum()) + eps
    return -(2.0 * target * den - num) / (den * den)


def weighted_bce_seg(pred: np.ndarray, target: np.ndarray,
                     weight_map: np.ndarray | None = None) -> float:
    """Mean per-pixel weight * BCE; the BEV centerness map is the usual weight."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if weight_map is None:
        w = np.ones_like(pred)
    else:
        w = np.asarray(weight_map, dtype=float).reshape(pred.shape)
    bce = -(target * np.log(pred) + (1.0 - target) * np.log(1.0 - pred))
    return float((w * bce).mean())


def weighted_bce_seg_grad(pred: np.ndarray, target: np.ndarray,
                          weight_map: np.ndarray | None = None) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if weight_map is None:
        w = np.ones_like(pred)
    else:
        w = np.asarray(weight_map, dtype=float).reshape(pred.shape)
    g = w * (-(target / pred) + (1.0 - target) / (1.0 - pred))
    return g / pred.size


def total_loss(det_terms: tuple[float, float, float, int],
               seg_terms: tuple[float, float],
               det2d_terms: tuple[float, float, float],
               weights: LossWeights = LossWeights()) -> LossReport:
    """Aggregate the three task losses.

    det_terms = (L_cls, L_loc, L_dir, n_pos); the 3D detection loss is their
    beta-weighted sum divided by max(n_pos, 1). seg_terms = (L_dice, L_bce).
    det2d_terms = (L_cls, L_box, L_centerness), summed unweighted; the 2D head
    itself lives outside this toolkit, only its aggregation contract is here.
    """
    lcls, lloc, ldir, n_pos = det_terms
    ldice, lbce = seg_terms
    if n_pos < 0:
        raise ValueError("n_pos must be >= 0")
    if min(lcls, lloc, ldir, ldice, lbce, *det2d_terms) < 0:
        raise ValueError("component losses must be non-negative")
    det3d = weights.w_det3d * (weights.beta_cls * lcls + weights.beta_loc * lloc
                               + weights.beta_dir * ldir) / max(n_pos, 1)
    seg3d = weights.w_seg3d * (weights.beta_dice * ldice + weights.beta_bce * lbce)
    det2d = weights.w_det2d * float(sum(det2d_terms))
    return LossReport(total=det3d + seg3d + det2d, det3d=det3d, seg3d=seg3d,
                      det2d=det2d, n_pos=n_pos)
