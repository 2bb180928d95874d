"""Oriented 3D box algebra: BEV rotated IoU, rotated NMS, anchor lattices.

IoU is planar (the yaw-rotated x/y footprint; z and height ignored), which is
what the BEV detection head and NMS operate on. Intersection uses
Sutherland-Hodgman convex clipping with shoelace areas, all in plain floats
for speed and determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .voxel import VoxelGridSpec

TWO_PI = 2.0 * math.pi

# Appendix defaults for the detection head.
NMS_IOU_THRESHOLD = 0.2
NMS_SCORE_THRESHOLD = 0.05
NMS_MAX_OUT = 500
ANCHOR_SIZES = ((0.86, 2.59, 1.0), (0.57, 1.73, 1.0), (1.0, 1.0, 1.0), (0.4, 0.4, 1.0))
ANCHOR_ROTATIONS = (0.0, math.pi / 2.0)


def normalize_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    theta = math.fmod(theta, TWO_PI)
    if theta <= -math.pi:
        theta += TWO_PI
    elif theta > math.pi:
        theta -= TWO_PI
    return theta


@dataclass
class Box3D:
    """Oriented box (x, y, z, w, h, l, theta, vx, vy): center, size, yaw, velocity.

    `l` extends along the heading, `w` laterally, `h` vertically.
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    theta: float
    vx: float = 0.0
    vy: float = 0.0
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        if self.w <= 0 or self.l <= 0 or self.h <= 0:
            raise ValueError(f"box sizes must be positive: w={self.w} l={self.l} h={self.h}")
        self.theta = normalize_angle(self.theta)

    def bev_corners(self) -> list[tuple[float, float]]:
        """Footprint corners, counter-clockwise."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        hl, hw = self.l / 2.0, self.w / 2.0
        pts = []
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            pts.append((self.x + c * dx - s * dy, self.y + s * dx + c * dy))
        return pts


@dataclass(frozen=True)
class AnchorSpec:
    sizes: tuple[tuple[float, float, float], ...] = ANCHOR_SIZES  # (w, l, h)
    rotations: tuple[float, ...] = ANCHOR_ROTATIONS
    z_center: float = 0.0

    def __post_init__(self):
        if not self.sizes or not self.rotations:
            raise ValueError("anchor sizes and rotations must be non-empty")


def _polygon_area(poly) -> float:
    """Shoelace area; positive for counter-clockwise rings."""
    n = len(poly)
    a = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman: clip a polygon by a convex CCW polygon."""
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            return out
        cx0, cy0 = clip[i]
        cx1, cy1 = clip[(i + 1) % n]
        ex, ey = cx1 - cx0, cy1 - cy0
        inp = out
        out = []
        prev = inp[-1]
        prev_in = ex * (prev[1] - cy0) - ey * (prev[0] - cx0) >= 0.0
        for cur in inp:
            cur_in = ex * (cur[1] - cy0) - ey * (cur[0] - cx0) >= 0.0
            if cur_in != prev_in:
                # Edge crossing: intersect segment prev->cur with the clip line.
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = (ex * (cy0 - prev[1]) - ey * (cx0 - prev[0])) / denom
                    out.append((prev[0] + t * dx, prev[1] + t * dy))
            if cur_in:
                out.append(cur)
            prev, prev_in = cur, cur_in
    return out


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection-over-union of the yaw-rotated BEV footprints."""
    # Fast reject: footprints cannot touch beyond the circumradius sum.
    ra = 0.5 * math.hypot(a.w, a.l)
    rb = 0.5 * math.hypot(b.w, b.l)
    if math.hypot(a.x - b.x, a.y - b.y) > ra + rb:
        return 0.0
    pa = a.bev_corners()
    pb = b.bev_corners()
    inter_poly = _clip_polygon(pa, pb)
    if len(inter_poly) < 3:
        return 0.0
    inter = abs(_polygon_area(inter_poly))
    area_a = a.w * a.l
    area_b = b.w * b.l
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def bev_iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = bev_iou(a, b)
    return out


def rotated_nms(boxes: list[Box3D], iou_threshold: float = NMS_IOU_THRESHOLD,
                score_threshold: float = NMS_SCORE_THRESHOLD,
                max_out: int = NMS_MAX_OUT) -> list[Box3D]:
    """Greedy per-class suppression by BEV IoU.

    Boxes below score_threshold are dropped, then within each class the
    highest-scoring survivor suppresses everything overlapping it above
    iou_threshold. Score ties break toward the lower original index. Output
    is ordered class_id ascending, then score descending.
    """
    per_class: dict[int, list[tuple[int, Box3D]]] = {}
    for idx, b in enumerate(boxes):
        if b.score >= score_threshold:
            per_class.setdefault(b.class_id, []).append((idx, b))
    result = []
    for cid in sorted(per_class):
        cand = sorted(per_class[cid], key=lambda ib: (-ib[1].score, ib[0]))
        kept: list[Box3D] = []
        for _, b in cand:
            if len(kept) >= max_out:
                break
            if all(bev_iou(b, k) <= iou_threshold for k in kept):
                kept.append(b)
        result.extend(kept)
    return result


def generate_anchor_array(spec: AnchorSpec, grid: VoxelGridSpec) -> np.ndarray:
    """Dense anchor lattice as an (M, 7) array of (x, y, z, w, l, h, theta).

    One anchor per (BEV cell center x size x rotation); ordering is cell-major
    (x, then y), then size, then rotation. M = nx*ny*len(sizes)*len(rotations).
    """
    xs = grid.origin[0] + (np.arange(grid.nx) + 0.5) * grid.dx
    ys = grid.origin[1] + (np.arange(grid.ny) + 0.5) * grid.dy
    sizes = np.asarray(spec.sizes, dtype=float)  # (S, 3) as (w, l, h)
    rots = np.asarray(spec.rotations, dtype=float)  # (R,)
    nx, ny, S, R = grid.nx, grid.ny, len(sizes), len(rots)
    out = np.empty((nx * ny * S * R, 7))
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)  # (nx*ny, 2), cell-major
    out = out.reshape(nx * ny, S, R, 7)
    out[:, :, :, 0] = centers[:, None, None, 0]
    out[:, :, :, 1] = centers[:, None, None, 1]
    out[:, :, :, 2] = spec.z_center
    out[:, :, :, 3] = sizes[None, :, None, 0]
    out[:, :, :, 4] = sizes[None, :, None, 1]
    out[:, :, :, 5] = sizes[None, :, None, 2]
    out[:, :, :, 6] = rots[None, None, :]
    return out.reshape(-1, 7)


def generate_anchors(spec: AnchorSpec, grid: VoxelGridSpec) -> list[Box3D]:
    """Anchor lattice as Box3D objects; prefer generate_anchor_array for the
    full-resolution grid (1.28M anchors at nuScenes scale)."""
    arr = generate_anchor_array(spec, grid)
    return [Box3D(x=r[0], y=r[1], z=r[2], w=r[3], l=r[4], h=r[5], theta=r[6])
            for r in arr]
