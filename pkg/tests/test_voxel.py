import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevkit.camera import project_point
from bevkit.scene import ring_rig
from bevkit.voxel import (DEFAULT_GRID, BevGrid, FeatureImage, ShapeMismatch,
                          VoxelGrid, VoxelGridSpec, bev_centerness, bev_pool2x,
                          channel_to_spatial, encoder_cost, spatial_to_channel,
                          unproject)


def small_spec(nx=8, ny=8, nz=2):
    return VoxelGridSpec(nx, ny, nz, 2.0, 2.0, 1.0, (-nx, -ny, 0.0))


def scalar_bilinear(img, u, v):
    """Independent scalar bilinear sampler used as the test oracle."""
    h, w = img.shape[:2]
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    fu = u - x0
    fv = v - y0
    x0 = min(max(x0, 0), w - 1)
    y0 = min(max(y0, 0), h - 1)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    return (img[y0, x0] * ((1 - fu) * (1 - fv)) + img[y1, x0] * ((1 - fu) * fv)
            + img[y0, x1] * (fu * (1 - fv)) + img[y1, x1] * (fu * fv))


def brute_unproject(rig, feats, spec, fusion="average"):
    """Per-voxel reference loop calling project_point independently."""
    c = feats[0].channels
    data = np.zeros((spec.nx, spec.ny, spec.nz, c))
    hits = np.zeros((spec.nx, spec.ny, spec.nz), dtype=int)
    for i in range(spec.nx):
        for j in range(spec.ny):
            for k in range(spec.nz):
                p = (spec.origin[0] + (i + 0.5) * spec.dx,
                     spec.origin[1] + (j + 0.5) * spec.dy,
                     spec.origin[2] + (k + 0.5) * spec.dz)
                acc = np.zeros(c)
                n = 0
                for ci in range(len(rig)):
                    hit = project_point(rig, ci, p)
                    if hit is None:
                        continue
                    acc = acc + scalar_bilinear(feats[ci].data, hit[0], hit[1])
                    n += 1
                if n:
                    data[i, j, k] = acc / n if fusion == "average" else acc
                    hits[i, j, k] = n
    return data, hits


class TestUnproject:
    def test_constant_feature_single_camera(self):
        rig = ring_rig(1, image_size=32)
        feats = [FeatureImage(0, np.ones((32, 32, 2)))]
        vg = unproject(rig, feats, small_spec(), fusion="average")
        seen = vg.hit_count > 0
        assert seen.any()
        # Bilinear weights sum to 1 only up to float rounding.
        np.testing.assert_allclose(vg.data[seen], 1.0, atol=1e-12)
        assert np.all(vg.data[~seen] == 0.0)

    def test_duplicate_cameras_average_matches_single(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(32, 32, 3))
        rig1 = ring_rig(1, image_size=32)
        cam = rig1[0]
        from bevkit.camera import CameraRig
        rig2 = CameraRig((cam, cam))
        spec = small_spec()
        single = unproject(rig1, [FeatureImage(0, img)], spec)
        double = unproject(rig2, [FeatureImage(0, img), FeatureImage(1, img)], spec)
        np.testing.assert_allclose(double.data, single.data)
        assert np.all(double.hit_count[single.hit_count > 0] == 2)

    def test_matches_brute_force_oracle_exactly(self):
        rng = np.random.default_rng(2)
        rig = ring_rig(2, image_size=24)
        feats = [FeatureImage(i, rng.uniform(size=(24, 24, 3))) for i in range(2)]
        spec = small_spec()
        vg = unproject(rig, feats, spec)
        data, hits = brute_unproject(rig, feats, spec)
        assert np.array_equal(vg.data, data)
        assert np.array_equal(vg.hit_count, hits)

    def test_hit_count_monotone_in_cameras(self):
        rng = np.random.default_rng(3)
        spec = small_spec()
        prev = np.zeros((spec.nx, spec.ny, spec.nz), dtype=int)
        from bevkit.camera import CameraRig
        full = ring_rig(3, image_size=24)
        for n in (1, 2, 3):
            rig = CameraRig(full.cameras[:n])
            feats = [FeatureImage(i, rng.uniform(size=(24, 24, 1))) for i in range(n)]
            vg = unproject(rig, feats, spec)
            assert np.all(vg.hit_count >= prev)
            prev = vg.hit_count

    def test_zero_hit_voxels_are_zero(self):
        rng = np.random.default_rng(4)
        rig = ring_rig(1, image_size=24)
        feats = [FeatureImage(0, rng.uniform(size=(24, 24, 2)))]
        vg = unproject(rig, feats, small_spec())
        assert np.all(vg.data[vg.hit_count == 0] == 0.0)

    def test_uniform_along_ray_nearest(self):
        # Uniform-depth assumption, taken literally: with nearest sampling and
        # one camera, every voxel on a pixel ray carries that pixel's feature.
        rng = np.random.default_rng(5)
        rig = ring_rig(1, image_size=16)
        img = rng.uniform(size=(16, 16, 2))
        spec = VoxelGridSpec(16, 16, 3, 1.5, 1.5, 0.7, (-12.0, -12.0, 0.0))
        vg = unproject(rig, [FeatureImage(0, img)], spec, fusion="first",
                       sampling="nearest")
        X, Y, Z = spec.cell_centers_xyz()
        for idx in np.argwhere(vg.hit_count == 1):
            i, j, k = idx
            u, v, _ = project_point(rig, 0, (X[i, j, k], Y[i, j, k], Z[i, j, k]))
            px = min(max(int(np.floor(u + 0.5)), 0), 15)
            py = min(max(int(np.floor(v + 0.5)), 0), 15)
            assert np.array_equal(vg.data[i, j, k], img[py, px])

    def test_rejects_mismatches(self):
        rig = ring_rig(2, image_size=16)
        f1 = FeatureImage(0, np.zeros((16, 16, 2)))
        f2 = FeatureImage(1, np.zeros((16, 16, 3)))
        with pytest.raises(ShapeMismatch):
            unproject(rig, [f1, f2], small_spec())
        with pytest.raises(ShapeMismatch):
            unproject(rig, [f1], small_spec())

    def test_intrinsics_autoscale_for_feature_maps(self):
        # Quarter-resolution features behave like full-res with scaled optics.
        rig = ring_rig(1, image_size=64)
        rng = np.random.default_rng(6)
        img = rng.uniform(size=(16, 16, 1))  # 64 -> 16 is the H/4 x W/4 case
        vg = unproject(rig, [FeatureImage(0, img)], small_spec())
        assert (vg.hit_count > 0).any()


class TestSpatialToChannel:
    def test_enumerated_values(self):
        spec = VoxelGridSpec(2, 2, 2, 1, 1, 1, (0, 0, 0))
        data = np.arange(1.0, 9.0).reshape(2, 2, 2, 1)
        bev = spatial_to_channel(VoxelGrid(spec, data, np.zeros((2, 2, 2), int)))
        assert bev.data.shape == (2, 2, 2)
        for x in range(2):
            for y in range(2):
                for z in range(2):
                    assert bev.data[x, y, z] == data[x, y, z, 0]
        assert sorted(bev.data.ravel()) == list(range(1, 9))

    @settings(max_examples=30, deadline=None)
    @given(nx=st.integers(1, 5), ny=st.integers(1, 5), nz=st.integers(1, 5),
           c=st.integers(1, 4), seed=st.integers(0, 10_000))
    def test_bijection_roundtrip(self, nx, ny, nz, c, seed):
        rng = np.random.default_rng(seed)
        spec = VoxelGridSpec(nx, ny, nz, 1, 1, 1, (0, 0, 0))
        grid = VoxelGrid(spec, rng.normal(size=(nx, ny, nz, c)),
                         np.zeros((nx, ny, nz), int))
        bev = spatial_to_channel(grid)
        back = channel_to_spatial(bev, nz, spec)
        assert np.array_equal(back.data, grid.data)
        # Pure re-layout: channel k*C+c <- (z=k, c), sum preserved.
        assert bev.data[..., 0].shape == (nx, ny)
        np.testing.assert_array_equal(bev.data.sum(), grid.data.sum())

    def test_channel_layout(self):
        rng = np.random.default_rng(7)
        spec = VoxelGridSpec(3, 4, 5, 1, 1, 1, (0, 0, 0))
        data = rng.normal(size=(3, 4, 5, 2))
        bev = spatial_to_channel(VoxelGrid(spec, data, np.zeros((3, 4, 5), int)))
        for k in range(5):
            for c in range(2):
                np.testing.assert_array_equal(bev.data[:, :, k * 2 + c],
                                              data[:, :, k, c])

    def test_pool2x(self):
        b = BevGrid(np.arange(16.0).reshape(4, 4, 1))
        p = bev_pool2x(b)
        assert p.data.shape == (2, 2, 1)
        assert p.data[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5) / 4)


class TestBevCenterness:
    def test_center_is_one(self):
        g = bev_centerness(101, 101).data[:, :, 0]
        assert g[50, 50] == 1.0

    def test_farthest_corner_is_two(self):
        for center in [None, (30.0, 70.0)]:
            g = bev_centerness(101, 101, center).data[:, :, 0]
            assert g.max() == pytest.approx(2.0, abs=1e-12)
            assert g.min() >= 1.0

    def test_midpoint_value_against_scalar_oracle(self):
        g = bev_centerness(101, 101).data[:, :, 0]
        oracle = 1.0 + np.sqrt((50.0 ** 2 + 0.0) / (50.0 ** 2 + 50.0 ** 2))
        assert g[100, 50] == pytest.approx(oracle, abs=1e-12)
        assert g[100, 50] == pytest.approx(1.70711, abs=1e-5)

    def test_radially_monotone(self):
        g = bev_centerness(51, 51).data[:, :, 0]
        rng = np.random.default_rng(8)
        for _ in range(500):
            # Two points on a common grid ray from the center; farther one
            # must not have the smaller weight.
            dx, dy = rng.integers(-2, 3), rng.integers(-2, 3)
            if dx == 0 and dy == 0:
                continue
            for k in range(1, 12):
                x1, y1 = 25 + k * dx, 25 + k * dy
                x0, y0 = 25 + (k - 1) * dx, 25 + (k - 1) * dy
                if not (0 <= x1 < 51 and 0 <= y1 < 51):
                    break
                assert g[x1, y1] >= g[x0, y0]

    def test_center_outside_grid_rejected(self):
        with pytest.raises(ValueError):
            bev_centerness(10, 10, (20.0, 0.0))


class TestEncoderCost:
    def test_rejects_zero_layers(self):
        with pytest.raises(ValueError):
            encoder_cost(DEFAULT_GRID, 8, 0, "naive3d", 16)

    def test_single_position_flops(self):
        spec = VoxelGridSpec(1, 1, 1, 1, 1, 1, (0, 0, 0))
        _, f3 = encoder_cost(spec, 5, 1, "naive3d", 7)
        assert f3 == 27 * 5 * 7
        _, f2 = encoder_cost(spec, 5, 1, "s2c2d", 7)
        assert f2 == 9 * (1 * 5) * 7

    def test_s2c_cheaper_on_default_grid(self):
        for layers in (1, 2, 3, 5):
            _, f3 = encoder_cost(DEFAULT_GRID, 64, layers, "naive3d", 192)
            _, f2 = encoder_cost(DEFAULT_GRID, 64, layers, "s2c2d", 192)
            assert f2 < f3

    def test_flops_linear_in_nx(self):
        spec = VoxelGridSpec(100, 80, 12, 0.25, 0.25, 0.5, (0, 0, 0))
        spec2 = VoxelGridSpec(200, 80, 12, 0.25, 0.25, 0.5, (0, 0, 0))
        for mode in ("naive3d", "s2c2d"):
            _, f1 = encoder_cost(spec, 32, 3, mode, 64)
            _, f2 = encoder_cost(spec2, 32, 3, mode, 64)
            assert f2 == 2 * f1
