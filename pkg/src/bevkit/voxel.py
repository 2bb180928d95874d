"""Voxel-grid feature unprojection and BEV tensors.

The core operation lifts per-camera 2D feature maps into a 3D voxel grid by
projecting every voxel center into every camera (uniform depth along the ray:
no learned lifting, a voxel simply receives the feature of the pixel it
projects to). The Spatial-to-Channel re-layout then flattens the vertical
axis into channels for cheap 2D processing, and an analytic cost model
quantifies why that beats stacking 3D convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRig


class ShapeMismatch(ValueError):
    """Raised when tensor shapes disagree with the rig or grid."""


@dataclass(frozen=True)
class FeatureImage:
    camera_index: int
    data: np.ndarray  # (height, width, channels), finite

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3:
            raise ShapeMismatch(f"feature image must be HxWxC, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise ValueError("feature image contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class VoxelGridSpec:
    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    origin: tuple[float, float, float]  # ego-frame min corner, meters

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("voxel counts must be >= 1")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError("bin sizes must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    def cell_centers_xyz(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voxel center coordinate arrays, each shaped (nx, ny, nz)."""
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        zs = self.origin[2] + (np.arange(self.nz) + 0.5) * self.dz
        return np.meshgrid(xs, ys, zs, indexing="ij")

    def bev_cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(xs, ys, indexing="ij")


# Default grid: 400x400x12 at (0.25m, 0.25m, 0.5m) spanning -50..+50 m.
DEFAULT_GRID = VoxelGridSpec(400, 400, 12, 0.25, 0.25, 0.5, (-50.0, -50.0, -3.0))


@dataclass
class VoxelGrid:
    spec: VoxelGridSpec
    data: np.ndarray  # (nx, ny, nz, C)
    hit_count: np.ndarray  # (nx, ny, nz) int, observing views per voxel

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass
class BevGrid:
    data: np.ndarray  # (nx, ny, channels)

    @property
    def nx(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def bilinear_sample(image: np.ndarray, u, v):
    """Bilinear lookup with pixel centers at integer coordinates.

    `u`, `v` may be scalars or arrays; out-of-range neighbors are clamped to
    the border pixel. Inputs are assumed in [0, W) x [0, H).
    """
    h, w = image.shape[0], image.shape[1]
    x0 = np.floor(u)
    y0 = np.floor(v)
    fu = u - x0
    fv = v - y0
    x0 = np.clip(x0.astype(int) if isinstance(x0, np.ndarray) else int(x0), 0, w - 1)
    y0 = np.clip(y0.astype(int) if isinstance(y0, np.ndarray) else int(y0), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if np.ndim(u) == 0:
        f00 = image[y0, x0]
        f01 = image[y1, x0]
        f10 = image[y0, x1]
        f11 = image[y1, x1]
        fu = float(fu)
        fv = float(fv)
    else:
        f00 = image[y0, x0]
        f01 = image[y1, x0]
        f10 = image[y0, x1]
        f11 = image[y1, x1]
        fu = fu[..., None]
        fv = fv[..., None]
    return (f00 * ((1.0 - fu) * (1.0 - fv)) + f01 * ((1.0 - fu) * fv)
            + f10 * (fu * (1.0 - fv)) + f11 * (fu * fv))


def nearest_sample(image: np.ndarray, u, v):
    """Nearest-pixel lookup; keeps every voxel on a ray bit-identical."""
    h, w = image.shape[0], image.shape[1]
    x = np.clip(np.floor(u + 0.5).astype(int) if np.ndim(u) else int(np.floor(u + 0.5)), 0, w - 1)
    y = np.clip(np.floor(v + 0.5).astype(int) if np.ndim(v) else int(np.floor(v + 0.5)), 0, h - 1)
    return image[y, x]


def unproject(rig: CameraRig, features: list[FeatureImage], spec: VoxelGridSpec,
              fusion: str = "average", sampling: str = "bilinear") -> VoxelGrid:
    """Fill a voxel grid with camera features under the uniform-depth model.

    Every voxel center is projected into every camera in rig order; wherever it
    lands in front of the camera and inside the feature map, the sampled
    feature is accumulated per `fusion` ("average", "sum" or "first").
    Voxels seen by no camera stay exactly zero. Carries no learned parameters.

    Intrinsics given at full image resolution are rescaled automatically when
    the feature map size differs.
    """
    if len(features) != len(rig):
        raise ShapeMismatch(f"{len(features)} feature images for {len(rig)} cameras")
    if fusion not in ("average", "sum", "first"):
        raise ValueError(f"unknown fusion mode {fusion!r}")
    if sampling not in ("bilinear", "nearest"):
        raise ValueError(f"unknown sampling mode {sampling!r}")
    channels = features[0].channels
    for f in features:
        if f.channels != channels:
            raise ShapeMismatch("feature images disagree on channel count")

    X, Y, Z = spec.cell_centers_xyz()
    data = np.zeros((spec.nx, spec.ny, spec.nz, channels))
    hits = np.zeros((spec.nx, spec.ny, spec.nz), dtype=int)

    for ci, cam in enumerate(rig.cameras):
        feat = features[ci]
        intr = cam.intrinsics
        if (feat.width, feat.height) != (intr.width, intr.height):
            intr = intr.rescaled(feat.width, feat.height)
        R = cam.extrinsics.rotation
        t = cam.extrinsics.translation
        # Same operation order as camera.project_point, elementwise.
        xc = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * Z + t[0]
        yc = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * Z + t[1]
        zc = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * Z + t[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = intr.fx * (xc / zc) + intr.cx
            v = intr.fy * (yc / zc) + intr.cy
        ok = (zc > 0.0) & (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
        if not ok.any():
            continue
        uu = u[ok]
        vv = v[ok]
        if sampling == "bilinear":
            sample = bilinear_sample(feat.data, uu, vv)
        else:
            sample = nearest_sample(feat.data, uu, vv)
        if fusion == "first":
            fresh = ok & (hits == 0)
            sel = fresh[ok]
            data[fresh] = sample[sel]
        else:
            data[ok] += sample
        hits[ok] += 1

    if fusion == "average":
        seen = hits > 0
        data[seen] = data[seen] / hits[seen][:, None]
    return VoxelGrid(spec=spec, data=data, hit_count=hits)


def spatial_to_channel(v: VoxelGrid) -> BevGrid:
    """Flatten (nx, ny, nz, C) into (nx, ny, nz*C); pure re-layout.

    Output channel k*C + c at (x, y) holds the voxel value at (x, y, z=k, c).
    """
    nx, ny, nz, c = v.data.shape
    return BevGrid(data=v.data.reshape(nx, ny, nz * c).copy())


def channel_to_spatial(b: BevGrid, nz: int, spec: VoxelGridSpec | None = None,
                       hit_count: np.ndarray | None = None) -> VoxelGrid:
    """Inverse of spatial_to_channel."""
    nx, ny, zc = b.data.shape
    if zc % nz:
        raise ShapeMismatch(f"{zc} channels not divisible by nz={nz}")
    c = zc // nz
    if spec is None:
        spec = VoxelGridSpec(nx, ny, nz, 1.0, 1.0, 1.0, (0.0, 0.0, 0.0))
    if hit_count is None:
        hit_count = np.zeros((nx, ny, nz), dtype=int)
    return VoxelGrid(spec=spec, data=b.data.reshape(nx, ny, nz, c).copy(),
                     hit_count=hit_count)


def bev_pool2x(b: BevGrid) -> BevGrid:
    """Optional 2x average pool for shape parity with downsampling encoders."""
    nx, ny, c = b.data.shape
    if nx % 2 or ny % 2:
        raise ShapeMismatch("2x pooling needs even nx, ny")
    d = b.data.reshape(nx // 2, 2, ny // 2, 2, c).mean(axis=(1, 3))
    return BevGrid(data=d)


def bev_centerness(nx: int, ny: int, center: tuple[float, float] | None = None) -> BevGrid:
    """Distance-based BEV loss-weight map in [1, 2].

    value(x, y) = 1 + sqrt(((x - xc)^2 + (y - yc)^2) / (mx^2 + my^2)) with
    mx, my the largest axis offsets achievable on the grid, so the map is
    exactly 1 at the center and exactly 2 at the farthest corner. The sqrt
    deliberately slows the growth with distance.
    """
    if center is None:
        center = ((nx - 1) / 2.0, (ny - 1) / 2.0)
    xc, yc = center
    if not (0 <= xc <= nx - 1 and 0 <= yc <= ny - 1):
        raise ValueError(f"center {center} outside grid {nx}x{ny}")
    xi = np.arange(nx)[:, None]
    yi = np.arange(ny)[None, :]
    mx = max(xc, (nx - 1) - xc)
    my = max(yc, (ny - 1) - yc)
    denom = mx * mx + my * my
    val = 1.0 + np.sqrt(((xi - xc) ** 2 + (yi - yc) ** 2) / denom)
    return BevGrid(data=val[:, :, None])


def encoder_cost(spec: VoxelGridSpec, channels: int, layers: int, mode: str,
                 conv_channels: int) -> tuple[int, int]:
    """Analytic (param_count, multiply-accumulate count) for a BEV encoder.

    mode "naive3d": `layers` 3x3x3 3D convolutions over the nx*ny*nz volume,
    C -> conv_channels -> ... -> conv_channels.
    mode "s2c2d": flatten vertically, then `layers` 3x3 2D convolutions over
    nx*ny with nz*C input channels.
    Stride 1, 'same' padding; biases counted in params.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    params = 0
    flops = 0
    if mode == "naive3d":
        positions = spec.nx * spec.ny * spec.nz
        kernel = 27
        c_in = channels
        for _ in range(layers):
            params += kernel * c_in * conv_channels + conv_channels
            flops += positions * kernel * c_in * conv_channels
            c_in = conv_channels
    elif mode == "s2c2d":
        positions = spec.nx * spec.ny
        kernel = 9
        c_in = spec.nz * channels
        for _ in range(layers):
            params += kernel * c_in * conv_channels + conv_channels
            flops += positions * kernel * c_in * conv_channels
            c_in = conv_channels
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return params, flops
