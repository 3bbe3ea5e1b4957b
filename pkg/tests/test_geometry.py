"""Camera model and positional-field construction tests."""

import numpy as np
import pytest

from pefield.geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PEField,
    build_pe_field,
    interpolate_pose,
    noise_grid_pe,
    project,
    read_pe_field,
    transform_point,
    unproject,
    write_pe_field,
)
from pefield.headmap import HeadLevelMap

K64 = CameraIntrinsics(fx=64.0, fy=64.0, cx=32.0, cy=32.0, width=64, height=64)
HM = HeadLevelMap.build(24)


def random_pose(rng) -> CameraPose:
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return CameraPose(q, rng.normal(size=3))


class TestCameraOps:
    def test_unproject_principal_ray(self):
        assert np.allclose(unproject((32.0, 32.0), 2.5, K64), [0, 0, 2.5])

    def test_unproject_unit_lateral(self):
        assert np.allclose(unproject((32.0 + 64.0, 32.0), 1.0, K64), [1, 0, 1])

    def test_unproject_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            unproject((1.0, 1.0), 0.0, K64)

    def test_project_on_axis(self):
        (px, py), z, front = project((0.0, 0.0, 3.0), K64)
        assert (px, py) == (32.0, 32.0) and z == 3.0 and front

    def test_project_behind_camera(self):
        (px, py), z, front = project((0.0, 0.0, -1.0), K64)
        assert not front
        assert np.isfinite(px) and np.isfinite(py)

    def test_roundtrip_many(self):
        rng = np.random.default_rng(0)
        n = 100_000
        px = rng.uniform(0, 64, n)
        py = rng.uniform(0, 64, n)
        z = rng.uniform(0.1, 20.0, n)
        pts = np.stack([z * (px - 32.0) / 64.0, z * (py - 32.0) / 64.0, z], axis=-1)
        px_back = 64.0 * pts[:, 0] / pts[:, 2] + 32.0
        py_back = 64.0 * pts[:, 1] / pts[:, 2] + 32.0
        assert np.max(np.abs(px_back - px)) <= 1e-9
        assert np.max(np.abs(py_back - py)) <= 1e-9
        # scalar API agrees with the vectorized expression
        i = 1234
        (qx, qy), qz, front = project(unproject((px[i], py[i]), z[i], K64), K64)
        assert front and abs(qx - px[i]) <= 1e-9 and abs(qy - py[i]) <= 1e-9
        assert abs(qz - z[i]) <= 1e-12

    def test_transform_identity(self):
        p = np.array([0.3, -0.7, 2.0])
        assert np.array_equal(transform_point(p, CameraPose.identity()), p)

    def test_transform_pure_translation(self):
        rel = CameraPose(np.eye(3), np.array([0.0, 0.0, 0.5]))
        assert np.allclose(transform_point((0.1, 0.2, 1.0), rel), [0.1, 0.2, 1.5])

    def test_transform_inverse_roundtrip(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            rel = random_pose(rng)
            p = rng.normal(size=3)
            back = transform_point(transform_point(p, rel), rel.inverse())
            assert np.max(np.abs(back - p)) <= 1e-12

    def test_pose_validation(self):
        with pytest.raises(ValueError):
            CameraPose(np.eye(3) * 1.001, np.zeros(3))
        with pytest.raises(ValueError):
            CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1


class TestPoseInterpolation:
    def test_endpoints(self):
        rng = np.random.default_rng(2)
        rel = random_pose(rng)
        p0 = interpolate_pose(rel, 0.0)
        p1 = interpolate_pose(rel, 1.0)
        assert np.allclose(p0.r, np.eye(3), atol=1e-12) and np.allclose(p0.t, 0, atol=1e-12)
        assert np.max(np.abs(p1.r - rel.r)) <= 1e-9
        assert np.max(np.abs(p1.t - rel.t)) <= 1e-9

    def test_incremental_steps_compose_to_target(self):
        rng = np.random.default_rng(3)
        rel = random_pose(rng)
        k = 5
        poses = [interpolate_pose(rel, i / k) for i in range(k + 1)]
        total = CameraPose.identity()
        for i in range(1, k + 1):
            total = poses[i].compose(poses[i - 1].inverse()).compose(total)
        assert np.max(np.abs(total.r - rel.r)) <= 1e-9
        assert np.max(np.abs(total.t - rel.t)) <= 1e-9


def constant_depth(z: float, size: int = 64) -> DepthMap:
    return DepthMap(values=np.full((size, size), z), valid=np.ones((size, size), bool))


class TestBuildPEField:
    def test_identity_matches_noise_grid_planar(self):
        pe = build_pe_field(constant_depth(2.5), K64, CameraPose.identity(), 8, HM, z_scale=1.0)
        noise = noise_grid_pe(8, 8, 8, HM)
        assert pe.keep.all()
        assert np.max(np.abs(pe.coords[..., :2] - noise.coords[..., :2])) <= 1e-6
        assert np.allclose(pe.coords[..., 2], 2.5)
        assert np.array_equal(noise.coords[..., 2], np.zeros_like(noise.coords[..., 2]))

    def test_backward_translation_contracts_and_deepens(self):
        # camera moves backward: points contract toward the principal point
        # and every depth grows by exactly the translation
        delta = 1.0
        rel = CameraPose(np.eye(3), np.array([0.0, 0.0, delta]))
        z0, z_scale = 2.0, 0.5
        pe = build_pe_field(constant_depth(z0), K64, rel, 8, HM, z_scale=z_scale)
        noise = noise_grid_pe(8, 8, 8, HM)
        assert np.allclose(pe.coords[..., 2], (z0 + delta) / z_scale)
        # closed form on a constant-depth plane: px' = (px - cx) * z0/(z0+d) + cx
        scale = z0 / (z0 + delta)
        for h in (0, 1, 5, 23):
            level = HM.levels[h]
            px = pe.coords[:, h, 0] * 8 / 2**level
            px_src = noise.coords[:, h, 0] * 8 / 2**level
            expected = (px_src - K64.cx) * scale + K64.cx
            assert np.max(np.abs(px - expected)) <= 1e-9

    def test_offgrid_discard_border_case(self):
        # lateral shift moves every patch-center projection left by
        # fx*shift/z = 19.2 px; the two left patch columns (centers 4 and 12)
        # land outside [0, 64) and are discarded, the rest survive
        shift = 0.6
        rel = CameraPose(np.eye(3), np.array([-shift, 0.0, 0.0]))
        pe = build_pe_field(constant_depth(2.0), K64, rel, 8, HM, z_scale=1.0)
        keep = pe.keep.reshape(8, 8)
        assert not keep[:, :2].any()
        assert keep[:, 2:].all()

    def test_behind_camera_not_kept(self):
        rel = CameraPose(np.eye(3), np.array([0.0, 0.0, -5.0]))
        pe = build_pe_field(constant_depth(2.0), K64, rel, 8, HM, z_scale=1.0)
        assert not pe.keep.any()
        assert np.all(np.isfinite(pe.coords))

    def test_keep_monotone_under_larger_bounds(self):
        rng = np.random.default_rng(4)
        rel = random_pose(rng)
        rel = CameraPose(rel.r, rel.t * 0.2)
        depth = DepthMap(values=rng.uniform(1.5, 4.0, (64, 64)))
        pe_small = build_pe_field(depth, K64, rel, 8, HM, z_scale=1.0)
        # enlarging the target bounds only: keep never flips true -> false
        K_big = CameraIntrinsics(64.0, 64.0, 32.0, 32.0, 128, 128)
        depth_big = DepthMap(values=np.pad(depth.values, ((0, 64), (0, 64)), constant_values=2.0))
        pe_big = build_pe_field(depth_big, K_big, rel, 8, HM, z_scale=1.0)
        small_keep = pe_small.keep.reshape(8, 8)
        big_keep = pe_big.keep.reshape(16, 16)[:8, :8]
        assert np.all(big_keep[small_keep])

    def test_scale_consistency_across_levels(self):
        from pefield.scenes import orbit_pose

        depth = DepthMap(values=np.full((64, 64), 3.0))
        rel = orbit_pose(CameraPose.identity(), 15.0, 2.5)
        pe = build_pe_field(depth, K64, rel, 8, HM, z_scale=1.0)
        level0 = pe.coords[:, 0, :2]
        for h in range(24):
            level = HM.levels[h]
            if level == 0:
                # level-0 heads duplicate the patch-center coordinates exactly
                assert np.array_equal(pe.coords[:, h, :2], level0)
                continue
            # sub-cell coords stay within one patch diagonal (in level-l
            # units) of the scaled patch-center coords for smooth depth
            diff = pe.coords[:, h, :2] - level0 * 2**level
            max_dist = np.max(np.linalg.norm(diff, axis=-1))
            assert max_dist <= 2**level * np.sqrt(2.0) + 1e-9

    def test_invalid_depth_falls_back_to_patch_neighbor(self):
        values = np.full((64, 64), 2.0)
        valid = np.ones((64, 64), bool)
        # poison the level-0 sample pixel of patch (0,0): center (4.0, 4.0) -> pixel (4,4)
        valid[4, 4] = False
        values[4, 4] = np.nan
        depth = DepthMap(values=values, valid=valid)
        pe = build_pe_field(depth, K64, CameraPose.identity(), 8, HM, z_scale=1.0)
        assert pe.keep.all()
        assert pe.coords[0, 0, 2] == pytest.approx(2.0)

    def test_patch_without_valid_depth_dropped(self):
        values = np.full((64, 64), 2.0)
        valid = np.ones((64, 64), bool)
        valid[0:8, 0:8] = False
        depth = DepthMap(values=values, valid=valid)
        pe = build_pe_field(depth, K64, CameraPose.identity(), 8, HM, z_scale=1.0)
        assert not pe.keep[0]
        assert pe.keep[1:].all()
        assert np.all(np.isfinite(pe.coords))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            build_pe_field(constant_depth(2.0, 32), K64, CameraPose.identity(), 8, HM, 1.0)
        with pytest.raises(ValueError):
            build_pe_field(constant_depth(2.0), K64, CameraPose.identity(), 7, HM, 1.0)
        with pytest.raises(ValueError):
            build_pe_field(constant_depth(2.0), K64, CameraPose.identity(), 8, HM, 0.0)


class TestNoiseGridPE:
    def test_level0_cell_centers(self):
        pe = noise_grid_pe(8, 8, 8, HM)
        for j in range(8):
            for i in range(8):
                tok = j * 8 + i
                assert pe.coords[tok, 0, 0] == i + 0.5
                assert pe.coords[tok, 0, 1] == j + 0.5

    def test_level2_subcell_example(self):
        # head 9 is level 2, sub-cell (3, 0): cell (0,0) -> (3.5, 0.5, 0)
        pe = noise_grid_pe(8, 8, 8, HM)
        assert tuple(pe.coords[0, 8]) == (3.5, 0.5, 0.0)

    def test_all_depths_zero_and_kept(self):
        pe = noise_grid_pe(8, 8, 8, HM)
        assert np.array_equal(pe.coords[..., 2], np.zeros((64, 24)))
        assert pe.keep.all()


class TestPEFieldExport:
    def test_header_and_roundtrip(self, tmp_path):
        pe = noise_grid_pe(4, 3, 8, HM)
        path = tmp_path / "field.pef"
        write_pe_field(pe, path)
        raw = path.read_bytes()
        header, _, payload = raw.partition(b"\n")
        assert header == b"PEF1 4 3 24"
        assert len(payload) == 4 * 3 * 24 * 3 * 4
        back = read_pe_field(path)
        assert back.grid_w == 4 and back.grid_h == 3
        assert np.allclose(back.coords, pe.coords, atol=1e-6)

    def test_truncated_payload_rejected(self, tmp_path):
        pe = noise_grid_pe(2, 2, 8, HM)
        path = tmp_path / "field.pef"
        write_pe_field(pe, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError):
            read_pe_field(path)


def test_pe_field_validation():
    with pytest.raises(ValueError):
        PEField(grid_w=2, grid_h=2, coords=np.zeros((3, 4, 3)), keep=np.ones(4, bool))
    with pytest.raises(ValueError):
        PEField(grid_w=2, grid_h=2, coords=np.full((4, 4, 3), np.nan), keep=np.ones(4, bool))
