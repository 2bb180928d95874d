"""Pinhole camera models and ego<->image geometry.

Conventions (fixed for the whole toolkit):
  * Ego frame: right-handed, z up. All boxes, voxels and rays live here.
  * Camera frame: +Z forward (optical axis), +X right, +Y down.
  * Extrinsics map ego to camera: p_cam = R @ p_ego + t.
  * Image plane: u grows with +X_cam (right), v grows with +Y_cam (down);
    pixel centers sit at integer coordinates, (0, 0) is the top-left pixel.

No lens distortion is modeled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


class RigError(ValueError):
    """Raised for invalid camera rig definitions."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise RigError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width):
            raise RigError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise RigError(f"cy={self.cy} outside [0, {self.height})")

    def rescaled(self, new_width: int, new_height: int) -> "Intrinsics":
        """Intrinsics for a resized image (e.g. feature maps at H/4 x W/4)."""
        sx = new_width / self.width
        sy = new_height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                          new_width, new_height)


@dataclass(frozen=True)
class Extrinsics:
    """Rigid ego->camera transform: p_cam = rotation @ p_ego + translation."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise RigError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise RigError("rotation determinant is not +1")

    def camera_center(self) -> np.ndarray:
        """Camera center in the ego frame."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    extrinsics: Extrinsics


@dataclass(frozen=True)
class CameraRig:
    """Ordered, immutable collection of cameras sharing one ego frame."""

    cameras: tuple[Camera, ...]

    def __post_init__(self):
        cams = tuple(self.cameras)
        if len(cams) < 1:
            raise RigError("rig needs at least one camera")
        object.__setattr__(self, "cameras", cams)

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, i: int) -> Camera:
        return self.cameras[i]


@dataclass(frozen=True)
class PixelRay:
    camera_index: int
    u: float
    v: float
    origin: np.ndarray  # (3,) ego frame, camera center
    direction: np.ndarray  # (3,) unit vector, ego frame

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def project_point(rig: CameraRig, camera_index: int, p_ego) -> tuple[float, float, float] | None:
    """Project an ego-frame point into one camera.

    Returns (u, v, depth) or None when the point is behind the camera or
    outside the image bounds.
    """
    cam = rig[camera_index]
    R = cam.extrinsics.rotation
    t = cam.extrinsics.translation
    X, Y, Z = float(p_ego[0]), float(p_ego[1]), float(p_ego[2])
    # Written out so the vectorized unprojection path can replicate the exact
    # floating-point operation order.
    xc = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * Z + t[0]
    yc = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * Z + t[1]
    zc = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * Z + t[2]
    if zc <= 0.0:
        return None
    intr = cam.intrinsics
    u = intr.fx * (xc / zc) + intr.cx
    v = intr.fy * (yc / zc) + intr.cy
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return None
    return u, v, zc


def pixel_to_ray(rig: CameraRig, camera_index: int, u: float, v: float) -> PixelRay:
    """Inverse of project_point up to depth: the ego-frame ray through (u, v)."""
    cam = rig[camera_index]
    intr = cam.intrinsics
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside image bounds "
                         f"{intr.width}x{intr.height}")
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_ego = cam.extrinsics.rotation.T @ d_cam
    d_ego = d_ego / np.linalg.norm(d_ego)
    return PixelRay(camera_index=camera_index, u=u, v=v,
                    origin=cam.extrinsics.camera_center(), direction=d_ego)


def boxes_3d_to_2d(rig: CameraRig, camera_index: int, boxes) -> list[tuple[tuple[float, float, float, float], int]]:
    """Project 3D boxes into one camera as axis-aligned pixel rectangles.

    Returns [(rect, source_index)] where rect = (u_min, v_min, u_max, v_max)
    clamped to [0, width-1] x [0, height-1]. Boxes with no corner at positive
    depth, or whose projection misses the frame entirely, are omitted.
    """
    cam = rig[camera_index]
    R = cam.extrinsics.rotation
    t = cam.extrinsics.translation
    intr = cam.intrinsics
    out = []
    for idx, box in enumerate(boxes):
        corners = box_corners_3d(box)
        us, vs = [], []
        for c in corners:
            pc = R @ c + t
            if pc[2] > 1e-9:
                us.append(intr.fx * (pc[0] / pc[2]) + intr.cx)
                vs.append(intr.fy * (pc[1] / pc[2]) + intr.cy)
        if not us:
            continue
        u0, u1 = min(us), max(us)
        v0, v1 = min(vs), max(vs)
        if u1 < 0 or v1 < 0 or u0 > intr.width - 1 or v0 > intr.height - 1:
            continue
        rect = (max(u0, 0.0), max(v0, 0.0),
                min(u1, float(intr.width - 1)), min(v1, float(intr.height - 1)))
        out.append((rect, idx))
    return out


def box_corners_3d(box) -> np.ndarray:
    """The 8 ego-frame corners of an oriented box (l along heading, w lateral)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hx, hy, hz = box.l / 2.0, box.w / 2.0, box.h / 2.0
    corners = np.empty((8, 3))
    i = 0
    for sx in (-hx, hx):
        for sy in (-hy, hy):
            for sz in (-hz, hz):
                corners[i] = (box.x + c * sx - s * sy,
                              box.y + s * sx + c * sy,
                              box.z + sz)
                i += 1
    return corners


# ---------------------------------------------------------------------------
# Rig file I/O: JSON with per-camera intrinsics + row-major rotation.

def rig_to_dict(rig: CameraRig) -> dict:
    cams = []
    for cam in rig.cameras:
        i, e = cam.intrinsics, cam.extrinsics
        cams.append({
            "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
            "width": i.width, "height": i.height,
            "rotation": [float(x) for x in e.rotation.reshape(9)],
            "translation": [float(x) for x in e.translation],
        })
    return {"cameras": cams}


def rig_from_dict(d: dict) -> CameraRig:
    cams = []
    for k, c in enumerate(d["cameras"]):
        try:
            intr = Intrinsics(c["fx"], c["fy"], c["cx"], c["cy"],
                              int(c["width"]), int(c["height"]))
            extr = Extrinsics(np.array(c["rotation"], dtype=float).reshape(3, 3),
                              np.array(c["translation"], dtype=float))
        except (RigError, KeyError, ValueError) as exc:
            raise RigError(f"camera {k}: {exc}") from exc
        cams.append(Camera(intr, extr))
    return CameraRig(tuple(cams))


def save_rig(path, rig: CameraRig) -> None:
    with open(path, "w") as f:
        json.dump(rig_to_dict(rig), f, indent=1)
        f.write("\n")


def load_rig(path) -> CameraRig:
    with open(path) as f:
        return rig_from_dict(json.load(f))
