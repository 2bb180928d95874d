"""Built-in oracle and invariant checks behind `bevkit selftest` / `loss-check`.

Each check re-derives expected values through an independent route (scalar
loops, Monte-Carlo quadrature, finite differences) and compares the fast
implementation against it. Everything is seeded, so two runs produce
byte-identical artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import losses
from .assign import AnchorPrediction, assign_dynamic, assign_fixed_iou
from .boxes import Box3D, bev_iou, bev_iou_matrix, rotated_nms
from .camera import CameraRig, pixel_to_ray, project_point
from .scene import generate_scene, ring_rig
from .voxel import (FeatureImage, VoxelGrid, VoxelGridSpec, bev_centerness,
                    bilinear_sample, encoder_cost, nearest_sample,
                    spatial_to_channel, channel_to_spatial, unproject)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def brute_force_unproject(rig, features, spec, fusion="average",
                          sampling="bilinear") -> VoxelGrid:
    """Reference unprojection: per-voxel Python loop over cameras."""
    channels = features[0].channels
    data = np.zeros((spec.nx, spec.ny, spec.nz, channels))
    hits = np.zeros((spec.nx, spec.ny, spec.nz), dtype=int)
    for i in range(spec.nx):
        for j in range(spec.ny):
            for k in range(spec.nz):
                p = (spec.origin[0] + (i + 0.5) * spec.dx,
                     spec.origin[1] + (j + 0.5) * spec.dy,
                     spec.origin[2] + (k + 0.5) * spec.dz)
                acc = np.zeros(channels)
                count = 0
                for ci in range(len(rig)):
                    hit = project_point(rig, ci, p)
                    if hit is None:
                        continue
                    u, v, _ = hit
                    if sampling == "bilinear":
                        s = bilinear_sample(features[ci].data, u, v)
                    else:
                        s = nearest_sample(features[ci].data, u, v)
                    if fusion == "first" and count == 0:
                        acc = np.array(s, dtype=float)
                    elif fusion != "first":
                        acc = acc + s
                    count += 1
                if count:
                    if fusion == "average":
                        acc = acc / count
                    data[i, j, k] = acc
                    hits[i, j, k] = count
    return VoxelGrid(spec=spec, data=data, hit_count=hits)


def mc_bev_iou(a: Box3D, b: Box3D, samples: np.ndarray) -> float:
    """Quasi-Monte-Carlo IoU over the union bounding box of both footprints."""
    pa = np.array(a.bev_corners())
    pb = np.array(b.bev_corners())
    lo = np.minimum(pa.min(axis=0), pb.min(axis=0))
    hi = np.maximum(pa.max(axis=0), pb.max(axis=0))
    pts = lo + samples * (hi - lo)

    def inside(box, p):
        c, s = math.cos(box.theta), math.sin(box.theta)
        dx = p[:, 0] - box.x
        dy = p[:, 1] - box.y
        local_x = c * dx + s * dy
        local_y = -s * dx + c * dy
        return (np.abs(local_x) <= box.l / 2.0) & (np.abs(local_y) <= box.w / 2.0)

    in_a = inside(a, pts)
    in_b = inside(b, pts)
    either = int((in_a | in_b).sum())
    if either == 0:
        return 0.0
    return int((in_a & in_b).sum()) / either


def _random_box(rng, spread=4.0) -> Box3D:
    return Box3D(x=float(rng.uniform(-spread, spread)),
                 y=float(rng.uniform(-spread, spread)), z=0.0,
                 w=float(rng.uniform(0.5, 3.0)), l=float(rng.uniform(0.5, 5.0)),
                 h=1.0, theta=float(rng.uniform(-math.pi, math.pi)),
                 score=float(rng.uniform(0.0, 1.0)),
                 class_id=int(rng.integers(0, 3)))


def check_projection_roundtrip(n_points=1000, seed=0) -> CheckResult:
    rig = ring_rig(6)
    rng = np.random.default_rng(seed)
    worst = 0.0
    tested = 0
    while tested < n_points:
        p = rng.uniform([-30, -30, -0.5], [30, 30, 2.0])
        for ci in range(len(rig)):
            hit = project_point(rig, ci, p)
            if hit is None:
                continue
            u, v, depth = hit
            ray = pixel_to_ray(rig, ci, u, v)
            rec = ray.origin + np.dot(p - ray.origin, ray.direction) * ray.direction
            worst = max(worst, float(np.linalg.norm(rec - p)))
            tested += 1
            break
    ok = worst < 1e-6
    return CheckResult("projection_roundtrip", ok, f"worst residual {worst:.2e} m")


def check_unproject_oracle(n_scenes=5, seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    for k in range(n_scenes):
        rig = ring_rig(2, image_size=16)
        spec = VoxelGridSpec(6, 6, 2, 2.0, 2.0, 1.0, (-6.0, -6.0, 0.0))
        feats = [FeatureImage(ci, rng.uniform(size=(16, 16, 3))) for ci in range(2)]
        fast = unproject(rig, feats, spec)
        ref = brute_force_unproject(rig, feats, spec)
        if not (np.array_equal(fast.data, ref.data)
                and np.array_equal(fast.hit_count, ref.hit_count)):
            return CheckResult("unproject_oracle", False, f"mismatch at scene {k}")
    return CheckResult("unproject_oracle", True, f"{n_scenes} scenes bitwise equal")


def check_s2c_roundtrip(n=10, seed=2) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        nx, ny, nz, c = (int(rng.integers(1, 8)) for _ in range(4))
        spec = VoxelGridSpec(nx, ny, nz, 1.0, 1.0, 1.0, (0, 0, 0))
        grid = VoxelGrid(spec, rng.normal(size=(nx, ny, nz, c)),
                         np.zeros((nx, ny, nz), dtype=int))
        back = channel_to_spatial(spatial_to_channel(grid), nz, spec)
        if not np.array_equal(back.data, grid.data):
            return CheckResult("s2c_roundtrip", False, "round-trip differs")
    return CheckResult("s2c_roundtrip", True, f"{n} random grids")


def check_centerness() -> CheckResult:
    g = bev_centerness(101, 101).data[:, :, 0]
    expected_mid = 1.0 + math.sqrt(50.0 ** 2 / (50.0 ** 2 + 50.0 ** 2))
    ok = (abs(g[50, 50] - 1.0) < 1e-12
          and abs(g[0, 0] - 2.0) < 1e-12
          and abs(g[100, 50] - expected_mid) < 1e-5)
    return CheckResult("centerness", ok,
                       f"center={g[50, 50]:.6f} corner={g[0, 0]:.6f} mid={g[100, 50]:.6f}")


def check_iou_mc(n_pairs=20, log2_samples=16, seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    sob = qmc.Sobol(d=2, scramble=True, seed=seed)
    samples = sob.random_base2(log2_samples)
    worst = 0.0
    for _ in range(n_pairs):
        a, b = _random_box(rng), _random_box(rng)
        worst = max(worst, abs(bev_iou(a, b) - mc_bev_iou(a, b, samples)))
    ok = worst < 2e-3
    return CheckResult("bev_iou_mc", ok, f"worst |impl - qmc| = {worst:.2e}")


def _nms_reference(boxes, iou_thr, score_thr, max_out):
    per_class = {}
    for idx, b in enumerate(boxes):
        if b.score >= score_thr:
            per_class.setdefault(b.class_id, []).append((idx, b))
    out = []
    for cid in sorted(per_class):
        items = sorted(per_class[cid], key=lambda ib: (-ib[1].score, ib[0]))
        iou = bev_iou_matrix([b for _, b in items], [b for _, b in items])
        alive = [True] * len(items)
        kept = []
        for i in range(len(items)):
            if not alive[i] or len(kept) >= max_out:
                continue
            kept.append(items[i][1])
            for j in range(i + 1, len(items)):
                if alive[j] and iou[i, j] > iou_thr:
                    alive[j] = False
        out.extend(kept)
    return out


def check_nms(n_sets=20, n_boxes=30, seed=4) -> CheckResult:
    rng = np.random.default_rng(seed)
    for k in range(n_sets):
        boxes = [_random_box(rng) for _ in range(n_boxes)]
        got = rotated_nms(boxes, 0.2, 0.05, 500)
        ref = _nms_reference(boxes, 0.2, 0.05, 500)
        if got != ref:
            return CheckResult("rotated_nms", False, f"mismatch at set {k}")
    return CheckResult("rotated_nms", True, f"{n_sets} sets match the reference")


def check_assignment(n_cases=10, seed=5) -> CheckResult:
    rng = np.random.default_rng(seed)
    for k in range(n_cases):
        anchors = [_random_box(rng) for _ in range(40)]
        gts = [_random_box(rng) for _ in range(4)]
        iou = bev_iou_matrix(anchors, gts)
        res = assign_fixed_iou(anchors, gts, 0.5, 0.35, iou=iou)
        sets = ({a for a, _ in res.positive}, set(res.negative), set(res.ignored))
        total = set().union(*sets)
        if (len(total) != len(anchors)
                or sum(len(s) for s in sets) != len(anchors)):
            return CheckResult("assignment", False, f"fixed-IoU partition broken at {k}")
        preds = AnchorPrediction(cls_scores=rng.uniform(size=(40, 3)), loc_boxes=anchors)
        dyn = assign_dynamic(anchors, gts, preds, bag_size=8, iou=iou)
        for g in range(len(gts)):
            if iou[:, g].max() > 0 and not any(gi == g for _, gi in dyn.positive):
                return CheckResult("assignment", False, f"gt {g} unmatched at {k}")
    return CheckResult("assignment", True, f"{n_cases} random cases")


def gradient_checks(n_trials=20, seed=6, h=1e-5, rtol=1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def rel_err(analytic, numeric):
        denom = max(abs(analytic), abs(numeric), 1e-8)
        return abs(analytic - numeric) / denom

    worst = 0.0
    for _ in range(n_trials):
        p = float(rng.uniform(0.05, 0.95))
        t = int(rng.integers(0, 2))
        num = (losses.focal_loss(p + h, t) - losses.focal_loss(p - h, t)) / (2 * h)
        worst = max(worst, rel_err(losses.focal_loss_grad(p, t), num))
    out.append(CheckResult("grad_focal", worst < rtol, f"worst rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(n_trials):
        pred = rng.normal(size=9)
        target = rng.normal(size=9)
        g = losses.smooth_l1_box_grad(pred, target)
        for i in range(9):
            e = np.zeros(9)
            e[i] = h
            num = (losses.smooth_l1_box(pred + e, target)
                   - losses.smooth_l1_box(pred - e, target)) / (2 * h)
            worst = max(worst, rel_err(g[i], num))
    out.append(CheckResult("grad_smooth_l1", worst < rtol, f"worst rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(n_trials):
        x = float(rng.normal(0, 2))
        t = int(rng.integers(0, 2))
        num = (losses.direction_loss(x + h, t) - losses.direction_loss(x - h, t)) / (2 * h)
        worst = max(worst, rel_err(losses.direction_loss_grad(x, t), num))
    out.append(CheckResult("grad_direction", worst < rtol, f"worst rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(n_trials):
        pred = rng.uniform(0.05, 0.95, size=(5, 5))
        target = (rng.uniform(size=(5, 5)) > 0.5).astype(float)
        g = losses.dice_loss_grad(pred, target)
        i, j = int(rng.integers(0, 5)), int(rng.integers(0, 5))
        e = np.zeros((5, 5))
        e[i, j] = h
        num = (losses.dice_loss(pred + e, target) - losses.dice_loss(pred - e, target)) / (2 * h)
        worst = max(worst, rel_err(g[i, j], num))
    out.append(CheckResult("grad_dice", worst < rtol, f"worst rel err {worst:.2e}"))

    worst = 0.0
    for _ in range(n_trials):
        pred = rng.uniform(0.05, 0.95, size=(5, 5))
        target = (rng.uniform(size=(5, 5)) > 0.5).astype(float)
        wmap = rng.uniform(1.0, 2.0, size=(5, 5))
        g = losses.weighted_bce_seg_grad(pred, target, wmap)
        i, j = int(rng.integers(0, 5)), int(rng.integers(0, 5))
        e = np.zeros((5, 5))
        e[i, j] = h
        num = (losses.weighted_bce_seg(pred + e, target, wmap)
               - losses.weighted_bce_seg(pred - e, target, wmap)) / (2 * h)
        worst = max(worst, rel_err(g[i, j], num))
    out.append(CheckResult("grad_weighted_bce", worst < rtol, f"worst rel err {worst:.2e}"))
    return out


def check_cost_model() -> CheckResult:
    from .voxel import DEFAULT_GRID
    _, f3d = encoder_cost(DEFAULT_GRID, 64, 3, "naive3d", 192)
    _, f2d = encoder_cost(DEFAULT_GRID, 64, 3, "s2c2d", 192)
    ok = f2d < f3d
    return CheckResult("encoder_cost", ok, f"s2c2d={f2d:.3e} naive3d={f3d:.3e}")


def check_uniform_ray(seed=7) -> CheckResult:
    grid = VoxelGridSpec(24, 24, 4, 1.0, 1.0, 0.5, (-12.0, -12.0, 0.0))
    scene = generate_scene(seed=seed, n_cameras=1, n_boxes=6, grid=grid)
    vg = unproject(scene.rig, scene.feature_images, grid, fusion="first",
                   sampling="nearest")
    cam = scene.rig[0]
    violations = 0
    checked = 0
    X, Y, Z = grid.cell_centers_xyz()
    for i in range(grid.nx):
        for j in range(grid.ny):
            for k in range(grid.nz):
                if vg.hit_count[i, j, k] != 1:
                    continue
                hit = project_point(scene.rig, 0, (X[i, j, k], Y[i, j, k], Z[i, j, k]))
                u, v, _ = hit
                px = int(math.floor(u + 0.5))
                py = int(math.floor(v + 0.5))
                px = min(max(px, 0), cam.intrinsics.width - 1)
                py = min(max(py, 0), cam.intrinsics.height - 1)
                checked += 1
                if not np.array_equal(vg.data[i, j, k],
                                      scene.feature_images[0].data[py, px]):
                    violations += 1
    ok = violations == 0 and checked > 0
    return CheckResult("uniform_ray", ok, f"{checked} voxels, {violations} violations")


def run_all_checks() -> list[CheckResult]:
    results = [
        check_projection_roundtrip(),
        check_unproject_oracle(),
        check_uniform_ray(),
        check_s2c_roundtrip(),
        check_centerness(),
        check_iou_mc(),
        check_nms(),
        check_assignment(),
        check_cost_model(),
    ]
    results.extend(gradient_checks())
    return results
