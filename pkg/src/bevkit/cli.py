"""`bevkit` command-line interface.

Subcommands: gen, project, centerness, assign, nms, eval, bench, noise-sweep,
loss-check, selftest. Report paths write delimited output (CSV / pixmaps /
header+binary arrays) plus matplotlib figures; all outputs are byte-stable
for identical inputs and seeds.

Exit codes: 0 success, 1 failed check, 2 usage error, 3 missing file,
4 malformed file, 5 shape mismatch.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as bio
from .assign import AnchorPrediction, assign_dynamic, assign_fixed_iou
from .boxes import (NMS_IOU_THRESHOLD, NMS_MAX_OUT, NMS_SCORE_THRESHOLD,
                    AnchorSpec, Box3D, generate_anchor_array, rotated_nms)
from .camera import RigError, load_rig
from .io import FileFormatError
from .metrics import center_distance_ap, seg_iou_per_class
from .scene import DEFAULT_NOISE_LEVELS, generate_scene, load_scene, save_scene
from .selfcheck import gradient_checks, run_all_checks
from .sweep import run_noise_sweep
from .voxel import (FeatureImage, ShapeMismatch, VoxelGridSpec, bev_centerness,
                    encoder_cost, spatial_to_channel, unproject)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_MISSING_FILE = 3
EXIT_BAD_FILE = 4
EXIT_SHAPE = 5


def _parse_grid(dims: str, cell: str, origin: str) -> VoxelGridSpec:
    try:
        nx, ny, nz = (int(v) for v in dims.lower().split("x"))
        dx, dy, dz = (float(v) for v in cell.split(","))
        ox, oy, oz = (float(v) for v in origin.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid spec: {exc}") from exc
    return VoxelGridSpec(nx, ny, nz, dx, dy, dz, (ox, oy, oz))


def _add_grid_args(p, dims="50x50x6", cell="1,1,0.5", origin="-25,-25,-1"):
    p.add_argument("--grid", default=dims, help="voxel counts NXxNYxNZ")
    p.add_argument("--cell", default=cell, help="bin sizes dx,dy,dz in meters")
    p.add_argument("--origin", default=origin, help="grid min corner x,y,z in meters")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("BEVKIT_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def cmd_gen(args) -> int:
    grid = _parse_grid(args.grid, args.cell, args.origin)
    scene = generate_scene(seed=args.seed, n_cameras=args.cameras,
                           n_boxes=args.boxes, grid=grid,
                           image_size=args.image_size)
    out = Path(args.out)
    save_scene(scene, out)
    bio.save_pgm(out / "map_drivable.pgm", scene.map_mask.data[:, :, 0], 0.0, 1.0)
    bio.save_pgm(out / "map_lane.pgm", scene.map_mask.data[:, :, 1], 0.0, 1.0)
    from .plots import save_map_figure
    boxes_cells = [replace(b,
                           x=(b.x - grid.origin[0]) / grid.dx,
                           y=(b.y - grid.origin[1]) / grid.dy,
                           w=b.w / grid.dy, l=b.l / grid.dx)
                   for b in scene.gt_boxes]
    save_map_figure(out / "map.png", scene.map_mask.data, boxes_cells)
    print(f"wrote scene bundle to {out} ({len(scene.gt_boxes)} boxes, "
          f"{len(scene.rig)} cameras)")
    return EXIT_OK


def cmd_project(args) -> int:
    rig = load_rig(args.rig)
    grid = _parse_grid(args.grid, args.cell, args.origin)
    feat_dir = Path(args.features)
    feats = []
    for i in range(len(rig)):
        path = feat_dir / f"cam{i:02d}.bin"
        if not path.exists():
            raise FileNotFoundError(path)
        feats.append(FeatureImage(camera_index=i,
                                  data=np.asarray(bio.load_array(path), dtype=float)))
    vg = unproject(rig, feats, grid, fusion=args.fusion, sampling=args.sampling)
    bio.save_array(args.out, vg.data)
    if args.bev_out:
        bev = spatial_to_channel(vg)
        bio.save_array(args.bev_out, bev.data)
    seen = int((vg.hit_count > 0).sum())
    print(f"unprojected {len(feats)} views into {grid.nx}x{grid.ny}x{grid.nz} grid; "
          f"{seen} voxels observed -> {args.out}")
    return EXIT_OK


def cmd_centerness(args) -> int:
    center = None
    if args.center:
        cx, cy = (float(v) for v in args.center.split(","))
        center = (cx, cy)
    grid = bev_centerness(args.nx, args.ny, center).data[:, :, 0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bio.save_pgm(out / "centerness.pgm", grid, 1.0, 2.0)
    bio.write_csv(out / "centerness_stats.csv",
                  ["nx", "ny", "min", "max"],
                  [[args.nx, args.ny, repr(float(grid.min())), repr(float(grid.max()))]])
    from .plots import save_heatmap
    save_heatmap(out / "centerness.png", grid, "BEV centerness weight",
                 cbar_label="loss weight")
    print(f"centerness {args.nx}x{args.ny}: min={grid.min():.6f} max={grid.max():.6f}")
    return EXIT_OK


def cmd_assign(args) -> int:
    anchors = bio.load_boxes_csv(args.anchors)
    gts = bio.load_boxes_csv(args.gts)
    if args.mode == "fixed":
        res = assign_fixed_iou(anchors, gts, args.pos_thr, args.neg_thr)
    else:
        if not args.preds:
            print("dynamic mode requires --preds", file=sys.stderr)
            return 2
        raw = np.asarray(bio.load_array(args.preds), dtype=float)
        n_cls = raw.shape[1] - 9
        if n_cls < 1 or raw.shape[0] != len(anchors):
            raise ShapeMismatch(
                f"predictions shape {raw.shape} does not fit {len(anchors)} anchors")
        loc = [Box3D(x=r[0], y=r[1], z=r[2], w=r[3], l=r[4], h=r[5], theta=r[6],
                     vx=r[7], vy=r[8]) for r in raw[:, n_cls:]]
        preds = AnchorPrediction(cls_scores=raw[:, :n_cls], loc_boxes=loc)
        res = assign_dynamic(anchors, gts, preds, bag_size=args.bag_size,
                             score_weight=args.score_weight)
    bio.save_assignment_csv(args.out, res)
    print(f"{len(res.positive)} positive, {len(res.negative)} negative, "
          f"{len(res.ignored)} ignored -> {args.out}")
    return EXIT_OK


def cmd_nms(args) -> int:
    boxes = bio.load_boxes_csv(getattr(args, "in"))
    kept = rotated_nms(boxes, args.iou, args.score, args.max)
    bio.save_boxes_csv(args.out, kept)
    print(f"kept {len(kept)} of {len(boxes)} boxes -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = bio.load_boxes_csv(args.preds)
    gts = bio.load_boxes_csv(args.gts)
    res = center_distance_ap(preds, gts)
    seg = []
    if args.map_pred and args.map_gt:
        mp = np.asarray(bio.load_array(args.map_pred), dtype=float)
        mg = np.asarray(bio.load_array(args.map_gt), dtype=float)
        seg = seg_iou_per_class(mp, mg)
    rows = []
    print(f"{'class':>8} " + " ".join(f"AP@{t:g}m" for t in res.thresholds))
    for ci, cls in enumerate(res.classes):
        vals = res.ap_per_class_per_threshold[ci]
        print(f"{cls:>8} " + " ".join(f"{v:6.3f}" for v in vals))
        rows.append([cls] + [repr(float(v)) for v in vals])
    print(f"mAP: {res.map:.4f}")
    for c, v in enumerate(seg):
        print(f"seg IoU class {c}: {v:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bio.write_csv(out / "detection_ap.csv",
                      ["class_id"] + [f"ap_{t:g}m" for t in res.thresholds], rows)
        bio.write_csv(out / "summary.csv",
                      ["map"] + [f"seg_iou_{c}" for c in range(len(seg))],
                      [[repr(res.map)] + [repr(v) for v in seg]])
    return EXIT_OK


def cmd_bench(args) -> int:
    grid = _parse_grid(args.grid, args.cell, args.origin)
    modes = ["naive3d", "s2c2d"] if args.mode == "both" else [args.mode]
    rows = []
    for mode in modes:
        params, flops = encoder_cost(grid, args.channels, args.layers, mode,
                                     args.conv_channels)
        rows.append([mode, params, flops])
        print(f"{mode:>8}: params={params:,}  mul-adds={flops:,}")
    if len(rows) == 2:
        ratio = rows[0][2] / rows[1][2]
        print(f"s2c2d is {ratio:.2f}x cheaper in mul-adds")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bio.write_csv(out / "bench.csv", ["mode", "params", "flops"], rows)
        from .plots import save_bench_figure
        save_bench_figure(out / "bench.png", [r[0] for r in rows],
                          [r[2] for r in rows])
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    levels = tuple(float(v) for v in args.levels.split(","))
    scene = load_scene(args.scene) if args.scene else None
    rows = run_noise_sweep(levels=levels, n_seeds=args.seeds,
                           n_cameras=args.cameras, n_boxes=args.boxes,
                           scene=scene,
                           rotation=not args.translation_only,
                           translation=not args.rotation_only,
                           threads=_threads(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bio.write_csv(out / "sweep.csv", ["sigma", "seg_iou", "map"],
                  [[repr(r.sigma), repr(r.seg_iou), repr(r.map)] for r in rows])
    from .plots import save_sweep_figure
    save_sweep_figure(out / "sweep.png", rows)
    for r in rows:
        print(f"sigma={r.sigma:<8g} seg_iou={r.seg_iou:.4f} mAP={r.map:.4f}")
    print(f"wrote {out / 'sweep.csv'} and {out / 'sweep.png'}")
    return EXIT_OK


def cmd_loss_check(args) -> int:
    results = gradient_checks(n_trials=args.trials)
    failed = _print_results(results)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _print_results(results) -> int:
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        failed += 0 if r.ok else 1
    return failed


def cmd_selftest(args) -> int:
    results = run_all_checks()
    failed = _print_results(results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bio.write_csv(out / "selftest.csv", ["check", "status", "detail"],
                      [[r.name, "pass" if r.ok else "fail", r.detail]
                       for r in results])
        # Deterministic artifact bundle alongside the report.
        grid = VoxelGridSpec(32, 32, 4, 1.0, 1.0, 0.5, (-16.0, -16.0, -1.0))
        scene = generate_scene(seed=7, n_cameras=4, n_boxes=8, grid=grid)
        save_scene(scene, out / "scene")
        vg = unproject(scene.rig, scene.feature_images, grid)
        bio.save_array(out / "voxels.bin", vg.data)
        cmap = bev_centerness(grid.nx, grid.ny).data[:, :, 0]
        bio.save_pgm(out / "centerness.pgm", cmap, 1.0, 2.0)
        from .plots import save_heatmap
        save_heatmap(out / "centerness.png", cmap, "BEV centerness weight")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bevkit",
                                 description="Multi-camera BEV geometry toolkit")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: BEVKIT_THREADS or all cores; "
                         "results are identical regardless)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene bundle")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--cameras", type=int, default=6)
    p.add_argument("--boxes", type=int, default=20)
    p.add_argument("--image-size", type=int, default=64)
    _add_grid_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("project", help="unproject features into a voxel grid")
    p.add_argument("--rig", required=True)
    p.add_argument("--features", required=True, help="directory of cam*.bin files")
    _add_grid_args(p, dims="400x400x12", cell="0.25,0.25,0.5", origin="-50,-50,-3")
    p.add_argument("--fusion", choices=["average", "sum", "first"], default="average")
    p.add_argument("--sampling", choices=["bilinear", "nearest"], default="bilinear")
    p.add_argument("--out", required=True)
    p.add_argument("--bev-out", default=None, help="also write the S2C-flattened grid")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("centerness", help="emit a BEV centerness map")
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--center", default=None, help="grid coords cx,cy (default middle)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_centerness)

    p = sub.add_parser("assign", help="match anchors to ground-truth boxes")
    p.add_argument("--mode", choices=["fixed", "dynamic"], required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--preds", default=None,
                   help="binary array (n_anchors, n_classes + 9): class scores "
                        "then x,y,z,w,l,h,theta,vx,vy")
    p.add_argument("--pos-thr", type=float, default=0.6)
    p.add_argument("--neg-thr", type=float, default=0.45)
    p.add_argument("--bag-size", type=int, default=50)
    p.add_argument("--score-weight", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("nms", help="rotated non-maximum suppression")
    p.add_argument("--in", required=True)
    p.add_argument("--iou", type=float, default=NMS_IOU_THRESHOLD)
    p.add_argument("--score", type=float, default=NMS_SCORE_THRESHOLD)
    p.add_argument("--max", type=int, default=NMS_MAX_OUT)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval", help="detection + segmentation metrics")
    p.add_argument("--preds", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--map-pred", default=None)
    p.add_argument("--map-gt", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="BEV encoder cost model")
    _add_grid_args(p, dims="400x400x12", cell="0.25,0.25,0.5", origin="-50,-50,-3")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--conv-channels", type=int, default=192)
    p.add_argument("--mode", choices=["naive3d", "s2c2d", "both"], default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("noise-sweep", help="calibration-noise robustness sweep")
    p.add_argument("--scene", default=None, help="scene bundle dir (default: generate)")
    p.add_argument("--levels", default=",".join(str(v) for v in DEFAULT_NOISE_LEVELS))
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--cameras", type=int, default=6)
    p.add_argument("--boxes", type=int, default=10)
    p.add_argument("--rotation-only", action="store_true")
    p.add_argument("--translation-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("loss-check", help="finite-difference gradient audit")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("selftest", help="run the oracle/invariant suite")
    p.add_argument("--out", default=None, help="write report + artifact bundle here")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "rotation_only", False) and getattr(args, "translation_only", False):
        ap.error("--rotation-only and --translation-only are mutually exclusive")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (FileFormatError, RigError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_BAD_FILE
    except ShapeMismatch as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE


if __name__ == "__main__":
    sys.exit(main())
