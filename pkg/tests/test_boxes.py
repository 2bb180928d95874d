import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevkit.boxes import (ANCHOR_ROTATIONS, ANCHOR_SIZES, NMS_IOU_THRESHOLD,
                          NMS_MAX_OUT, NMS_SCORE_THRESHOLD, AnchorSpec, Box3D,
                          bev_iou, generate_anchor_array, generate_anchors,
                          normalize_angle, rotated_nms)
from bevkit.voxel import VoxelGridSpec


def mc_iou(a: Box3D, b: Box3D, n=1_000_000, seed=0) -> float:
    """Monte-Carlo point-sampling oracle over the union bounding box."""
    rng = np.random.default_rng(seed)
    pa = np.array(a.bev_corners())
    pb = np.array(b.bev_corners())
    lo = np.minimum(pa.min(0), pb.min(0))
    hi = np.maximum(pa.max(0), pb.max(0))
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box, p):
        c, s = math.cos(box.theta), math.sin(box.theta)
        lx = c * (p[:, 0] - box.x) + s * (p[:, 1] - box.y)
        ly = -s * (p[:, 0] - box.x) + c * (p[:, 1] - box.y)
        return (np.abs(lx) <= box.l / 2) & (np.abs(ly) <= box.w / 2)

    in_a, in_b = inside(a, pts), inside(b, pts)
    either = (in_a | in_b).sum()
    return float((in_a & in_b).sum() / either) if either else 0.0


def rand_box(rng, spread=4.0):
    return Box3D(x=float(rng.uniform(-spread, spread)),
                 y=float(rng.uniform(-spread, spread)), z=0.0,
                 w=float(rng.uniform(0.5, 3.0)), l=float(rng.uniform(0.5, 5.0)),
                 h=1.0, theta=float(rng.uniform(-math.pi, math.pi)),
                 score=float(rng.uniform(0, 1)), class_id=int(rng.integers(0, 3)))


class TestBevIou:
    def test_identical_boxes(self):
        b = Box3D(1, 2, 0, 2, 4, 1, 0.7)
        assert bev_iou(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_boxes(self):
        a = Box3D(0, 0, 0, 1, 1, 1, 0)
        b = Box3D(100, 0, 0, 1, 1, 1, 0)
        assert bev_iou(a, b) == 0.0

    def test_half_overlapping_unit_squares(self):
        a = Box3D(0, 0, 0, 1, 1, 1, 0)
        b = Box3D(0.5, 0, 0, 1, 1, 1, 0)
        assert bev_iou(a, b) == pytest.approx(0.5 / 1.5, abs=1e-12)
        assert bev_iou(a, b) == pytest.approx(mc_iou(a, b), abs=1e-3)

    def test_rotated_pair_vs_monte_carlo(self):
        a = Box3D(0, 0, 0, 1.5, 3.0, 1, 0.4)
        b = Box3D(0.7, -0.3, 0, 2.0, 1.0, 1, -1.1)
        assert bev_iou(a, b) == pytest.approx(mc_iou(a, b), abs=1e-3)

    def test_symmetry_and_self(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b = rand_box(rng), rand_box(rng)
            assert bev_iou(a, b) == pytest.approx(bev_iou(b, a), abs=1e-12)
            assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-12)
            assert 0.0 <= bev_iou(a, b) <= 1.0

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(2)
        from dataclasses import replace
        for _ in range(30):
            a, b = rand_box(rng), rand_box(rng)
            base = bev_iou(a, b)
            phi = float(rng.uniform(-math.pi, math.pi))
            px, py = rng.uniform(-3, 3, size=2)
            c, s = math.cos(phi), math.sin(phi)

            def rot(box):
                dx, dy = box.x - px, box.y - py
                return replace(box, x=px + c * dx - s * dy, y=py + s * dx + c * dy,
                               theta=box.theta + phi)

            assert bev_iou(rot(a), rot(b)) == pytest.approx(base, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(theta=st.floats(-10, 10))
    def test_normalize_angle(self, theta):
        t = normalize_angle(theta)
        assert -math.pi < t <= math.pi
        assert math.cos(t) == pytest.approx(math.cos(theta), abs=1e-9)
        assert math.sin(t) == pytest.approx(math.sin(theta), abs=1e-9)


def nms_reference(boxes, iou_thr, score_thr, max_out):
    """Naive O(n^2) suppression with a precomputed IoU matrix."""
    out = []
    classes = sorted({b.class_id for b in boxes})
    for cid in classes:
        items = [(i, b) for i, b in enumerate(boxes)
                 if b.class_id == cid and b.score >= score_thr]
        items.sort(key=lambda ib: (-ib[1].score, ib[0]))
        n = len(items)
        iou = [[bev_iou(items[i][1], items[j][1]) for j in range(n)] for i in range(n)]
        suppressed = [False] * n
        kept = []
        for i in range(n):
            if suppressed[i] or len(kept) >= max_out:
                continue
            kept.append(items[i][1])
            for j in range(i + 1, n):
                if iou[i][j] > iou_thr:
                    suppressed[j] = True
        out.extend(kept)
    return out


class TestRotatedNms:
    def test_duplicate_keeps_higher_score(self):
        a = Box3D(0, 0, 0, 1, 2, 1, 0.3, score=0.9)
        b = Box3D(0, 0, 0, 1, 2, 1, 0.3, score=0.8)
        assert rotated_nms([a, b], 0.2, 0.05, 500) == [a]

    def test_all_below_score_threshold(self):
        boxes = [Box3D(0, 0, 0, 1, 1, 1, 0, score=0.04),
                 Box3D(3, 0, 0, 1, 1, 1, 0, score=0.01)]
        assert rotated_nms(boxes) == []

    def test_paper_defaults_wired(self):
        assert NMS_IOU_THRESHOLD == 0.2
        assert NMS_SCORE_THRESHOLD == 0.05
        assert NMS_MAX_OUT == 500
        import inspect
        sig = inspect.signature(rotated_nms)
        assert sig.parameters["iou_threshold"].default == 0.2
        assert sig.parameters["score_threshold"].default == 0.05
        assert sig.parameters["max_out"].default == 500

    def test_matches_reference_on_random_sets(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            boxes = [rand_box(rng, spread=3.0) for _ in range(50)]
            assert rotated_nms(boxes, 0.2, 0.05, 500) == \
                nms_reference(boxes, 0.2, 0.05, 500)

    def test_antichain_property(self):
        rng = np.random.default_rng(4)
        boxes = [rand_box(rng, spread=2.0) for _ in range(60)]
        kept = rotated_nms(boxes, 0.3, 0.05, 500)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                if kept[i].class_id == kept[j].class_id:
                    assert bev_iou(kept[i], kept[j]) <= 0.3

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        boxes = [rand_box(rng, spread=2.0) for _ in range(60)]
        once = rotated_nms(boxes, 0.2, 0.05, 500)
        assert rotated_nms(once, 0.2, 0.05, 500) == once

    def test_max_out(self):
        boxes = [Box3D(3 * i, 0, 0, 1, 1, 1, 0, score=0.5) for i in range(10)]
        assert len(rotated_nms(boxes, 0.2, 0.05, 4)) == 4

    def test_output_ordering(self):
        rng = np.random.default_rng(6)
        boxes = [rand_box(rng, spread=5.0) for _ in range(40)]
        kept = rotated_nms(boxes)
        key = [(b.class_id, -b.score) for b in kept]
        assert key == sorted(key)


class TestAnchors:
    def grid(self, nx=2, ny=2):
        return VoxelGridSpec(nx, ny, 1, 0.5, 0.5, 1.0, (0.0, 0.0, 0.0))

    def test_count_small_grid(self):
        anchors = generate_anchors(AnchorSpec(), self.grid())
        assert len(anchors) == 2 * 2 * 4 * 2

    def test_appendix_defaults(self):
        assert ANCHOR_SIZES == ((0.86, 2.59, 1.0), (0.57, 1.73, 1.0),
                                (1.0, 1.0, 1.0), (0.4, 0.4, 1.0))
        assert ANCHOR_ROTATIONS == (0.0, math.pi / 2)

    def test_centers_on_cell_centers(self):
        anchors = generate_anchors(AnchorSpec(), self.grid())
        centers = {(a.x, a.y) for a in anchors}
        assert centers == {(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)}
        # cell-major, then size, then rotation
        assert (anchors[0].x, anchors[0].y) == (0.25, 0.25)
        assert anchors[0].theta == 0.0
        assert anchors[1].theta == pytest.approx(math.pi / 2)
        assert (anchors[0].w, anchors[0].l) == (0.86, 2.59)

    def test_nuscenes_scale_count(self):
        grid = VoxelGridSpec(400, 400, 12, 0.25, 0.25, 0.5, (-50, -50, -3))
        arr = generate_anchor_array(AnchorSpec(), grid)
        assert arr.shape == (1_280_000, 7)

    def test_array_matches_objects(self):
        spec = AnchorSpec()
        grid = self.grid(3, 2)
        arr = generate_anchor_array(spec, grid)
        objs = generate_anchors(spec, grid)
        assert len(objs) == arr.shape[0]
        for row, box in zip(arr, objs):
            assert (box.x, box.y, box.z, box.w, box.l, box.h, box.theta) == \
                pytest.approx(tuple(row))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            AnchorSpec(sizes=())
        with pytest.raises(ValueError):
            Box3D(0, 0, 0, -1, 1, 1, 0)
