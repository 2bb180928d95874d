"""Deterministic synthetic-world generation and extrinsic-noise injection.

Everything is a pure function of (seed, parameters), built on the Philox
counter-based generator with purpose-specific key streams, so regenerating a
scene is bit-identical. Feature images are rendered so that pixels covered by
a box's 2D projection carry a class-coded feature vector, which makes
unprojection and end-to-end tests meaningful without any network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath
from scipy.spatial.transform import Rotation

from .boxes import Box3D
from .camera import Camera, CameraRig, Extrinsics, Intrinsics, load_rig, save_rig
from .io import load_array, load_boxes_csv, save_array, save_boxes_csv
from .voxel import BevGrid, FeatureImage, VoxelGridSpec

# Purpose keys for the Philox streams.
_STREAM_RIG = 1
_STREAM_BOXES = 2
_STREAM_MAP = 3
_STREAM_NOISE = 4

N_CLASSES = 3
# (w, l, h) mean sizes per class: car-like, pedestrian-like, barrier-like.
_CLASS_SIZE_PRIORS = ((1.9, 4.5, 1.6), (0.6, 0.6, 1.7), (2.5, 0.6, 1.0))

DEFAULT_NOISE_LEVELS = (1e-3, 1e-2, 5e-2, 1e-1, 2e-1)


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(purpose)]))


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    rotation: bool = True
    translation: bool = True
    levels: tuple[float, ...] = DEFAULT_NOISE_LEVELS

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class SyntheticScene:
    seed: int
    rig: CameraRig
    gt_boxes: list[Box3D]
    map_mask: BevGrid  # (nx, ny, 2) binary: drivable, lane
    feature_images: list[FeatureImage]
    grid: VoxelGridSpec


def ring_rig(n_cameras: int, image_size: int = 64, radius: float = 1.0,
             height: float = 1.5, fov_deg: float = 90.0) -> CameraRig:
    """Outward-facing camera ring; full horizontal coverage for n >= 360/fov."""
    cams = []
    f = (image_size / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    c = (image_size - 1) / 2.0
    intr = Intrinsics(fx=f, fy=f, cx=c, cy=c, width=image_size, height=image_size)
    for i in range(n_cameras):
        phi = 2.0 * math.pi * i / n_cameras
        cphi, sphi = math.cos(phi), math.sin(phi)
        # Camera axes in ego coords: +Z forward (outward), +X right, +Y down.
        z_cam = np.array([cphi, sphi, 0.0])
        x_cam = np.array([sphi, -cphi, 0.0])
        y_cam = np.array([0.0, 0.0, -1.0])
        R = np.stack([x_cam, y_cam, z_cam])  # ego -> camera
        center = np.array([radius * cphi, radius * sphi, height])
        t = -R @ center
        cams.append(Camera(intr, Extrinsics(R, t)))
    return CameraRig(tuple(cams))


def _raster_polygon(poly_xy: np.ndarray, grid: VoxelGridSpec) -> np.ndarray:
    """Binary BEV mask of cells whose centers fall inside the polygon."""
    cx, cy = grid.bev_cell_centers()
    pts = np.stack([cx.ravel(), cy.ravel()], axis=1)
    inside = MplPath(poly_xy).contains_points(pts)
    return inside.reshape(grid.nx, grid.ny).astype(float)


def _raster_polyline(pts_xy: np.ndarray, grid: VoxelGridSpec) -> np.ndarray:
    """1-cell-wide rasterization by dense sampling along the segments."""
    mask = np.zeros((grid.nx, grid.ny))
    step = 0.25 * min(grid.dx, grid.dy)
    for a, b in zip(pts_xy[:-1], pts_xy[1:]):
        n = max(2, int(np.hypot(*(b - a)) / step) + 1)
        for s in np.linspace(0.0, 1.0, n):
            p = a + s * (b - a)
            ix = int(math.floor((p[0] - grid.origin[0]) / grid.dx))
            iy = int(math.floor((p[1] - grid.origin[1]) / grid.dy))
            if 0 <= ix < grid.nx and 0 <= iy < grid.ny:
                mask[ix, iy] = 1.0
    return mask


def box_class_feature(class_id: int, channels: int) -> np.ndarray:
    """Class-coded feature vector painted into images under box projections."""
    f = np.zeros(channels)
    f[class_id % channels] = 1.0
    f[-1] = 1.0  # objectness channel
    return f


def _cell_of(grid: VoxelGridSpec, x: float, y: float) -> tuple[int, int] | None:
    ix = int(math.floor((x - grid.origin[0]) / grid.dx))
    iy = int(math.floor((y - grid.origin[1]) / grid.dy))
    if 0 <= ix < grid.nx and 0 <= iy < grid.ny:
        return ix, iy
    return None


def generate_scene(seed: int, n_cameras: int, n_boxes: int, grid: VoxelGridSpec,
                   channels: int = N_CLASSES + 1, image_size: int = 64,
                   constrained: bool = True) -> SyntheticScene:
    """Build a deterministic scene: ring rig, boxes, map masks, rendered features.

    With constrained placement each box center is resampled (up to 100 tries)
    until it lands on a drivable cell.
    """
    if n_cameras < 1:
        raise ValueError("need at least one camera")
    rig = ring_rig(n_cameras, image_size=image_size)

    extent = min((grid.nx * grid.dx) / 2.0, (grid.ny * grid.dy) / 2.0)
    cx0 = grid.origin[0] + grid.nx * grid.dx / 2.0
    cy0 = grid.origin[1] + grid.ny * grid.dy / 2.0

    # Drivable area: random star-shaped polygon around the grid center.
    rng_map = _stream(seed, _STREAM_MAP)
    n_vert = int(rng_map.integers(8, 14))
    angles = np.sort(rng_map.uniform(0.0, 2.0 * math.pi, n_vert))
    radii = rng_map.uniform(0.55, 0.95, n_vert) * extent
    poly = np.stack([cx0 + radii * np.cos(angles), cy0 + radii * np.sin(angles)], axis=1)
    drivable = _raster_polygon(poly, grid)
    # Lane boundary: circular arc polyline inside the drivable region.
    lane_r = float(rng_map.uniform(0.3, 0.5)) * extent
    arc = np.linspace(0.0, 2.0 * math.pi, 128)
    lane_pts = np.stack([cx0 + lane_r * np.cos(arc), cy0 + lane_r * np.sin(arc)], axis=1)
    lane = _raster_polyline(lane_pts, grid)
    map_mask = BevGrid(data=np.stack([drivable, lane], axis=2))

    rng_boxes = _stream(seed, _STREAM_BOXES)
    gt_boxes: list[Box3D] = []
    for _ in range(n_boxes):
        cls = int(rng_boxes.integers(0, N_CLASSES))
        wm, lm, hm = _CLASS_SIZE_PRIORS[cls]
        w = wm * float(rng_boxes.uniform(0.85, 1.15))
        l = lm * float(rng_boxes.uniform(0.85, 1.15))
        h = hm * float(rng_boxes.uniform(0.85, 1.15))
        for _try in range(100):
            r = float(rng_boxes.uniform(4.0, 0.85 * extent))
            phi = float(rng_boxes.uniform(0.0, 2.0 * math.pi))
            x = cx0 + r * math.cos(phi)
            y = cy0 + r * math.sin(phi)
            cell = _cell_of(grid, x, y)
            if not constrained or (cell is not None and drivable[cell] > 0):
                break
        theta = float(rng_boxes.uniform(-math.pi, math.pi))
        gt_boxes.append(Box3D(x=x, y=y, z=h / 2.0, w=w, l=l, h=h, theta=theta,
                              class_id=cls))

    features = render_features(rig, gt_boxes, channels=channels)
    return SyntheticScene(seed=seed, rig=rig, gt_boxes=gt_boxes,
                          map_mask=map_mask, feature_images=features, grid=grid)


def render_features(rig: CameraRig, boxes: list[Box3D], channels: int) -> list[FeatureImage]:
    """Paint each box's projected rectangle with its class-coded feature."""
    from .camera import boxes_3d_to_2d

    images = []
    for ci, cam in enumerate(rig.cameras):
        img = np.zeros((cam.intrinsics.height, cam.intrinsics.width, channels))
        for rect, src in boxes_3d_to_2d(rig, ci, boxes):
            u0, v0, u1, v1 = rect
            feat = box_class_feature(boxes[src].class_id, channels)
            img[int(math.floor(v0)):int(math.ceil(v1)) + 1,
                int(math.floor(u0)):int(math.ceil(u1)) + 1] = feat
        images.append(FeatureImage(camera_index=ci, data=img))
    return images


def perturb_extrinsics(rig: CameraRig, noise: NoiseSpec, seed: int) -> CameraRig:
    """Jitter each camera pose: axis-angle rotation of magnitude
    |N(0, sigma^2)| clamped to 3*sigma, plus N(0, sigma^2) translation."""
    if noise.sigma == 0.0:
        return rig
    rng = _stream(seed, _STREAM_NOISE)
    cams = []
    for cam in rig.cameras:
        R = cam.extrinsics.rotation
        t = cam.extrinsics.translation
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = min(abs(float(rng.normal(0.0, noise.sigma))), 3.0 * noise.sigma)
        dt = rng.normal(0.0, noise.sigma, size=3)
        if noise.rotation:
            dR = Rotation.from_rotvec(angle * axis).as_matrix()
            R = dR @ R
        if noise.translation:
            t = t + dt
        cams.append(Camera(cam.intrinsics, Extrinsics(R, t)))
    return CameraRig(tuple(cams))


# ---------------------------------------------------------------------------
# Scene bundle directory: rig.json, gt_boxes.csv, map.bin, features/*.bin

def save_scene(scene: SyntheticScene, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_rig(out / "rig.json", scene.rig)
    save_boxes_csv(out / "gt_boxes.csv", scene.gt_boxes)
    save_array(out / "map.bin", scene.map_mask.data)
    import json
    with open(out / "grid.json", "w") as f:
        g = scene.grid
        json.dump({"nx": g.nx, "ny": g.ny, "nz": g.nz, "dx": g.dx, "dy": g.dy,
                   "dz": g.dz, "origin": list(g.origin), "seed": scene.seed}, f)
        f.write("\n")
    feat_dir = out / "features"
    feat_dir.mkdir(exist_ok=True)
    for f_img in scene.feature_images:
        save_array(feat_dir / f"cam{f_img.camera_index:02d}.bin", f_img.data)


def load_scene(in_dir) -> SyntheticScene:
    import json
    src = Path(in_dir)
    rig = load_rig(src / "rig.json")
    gt = load_boxes_csv(src / "gt_boxes.csv")
    mask = BevGrid(data=np.asarray(load_array(src / "map.bin"), dtype=float))
    with open(src / "grid.json") as f:
        g = json.load(f)
    grid = VoxelGridSpec(g["nx"], g["ny"], g["nz"], g["dx"], g["dy"], g["dz"],
                         tuple(g["origin"]))
    feats = []
    for i in range(len(rig)):
        feats.append(FeatureImage(
            camera_index=i,
            data=np.asarray(load_array(src / "features" / f"cam{i:02d}.bin"), dtype=float)))
    return SyntheticScene(seed=int(g.get("seed", -1)), rig=rig, gt_boxes=gt,
                          map_mask=mask, feature_images=feats, grid=grid)
