"""Scene generation, rendering, and dataset round-trip tests."""

import json
import math

import numpy as np
import pytest

from pefield.geometry import CameraIntrinsics, CameraPose
from pefield.scenes import (
    FAR_DEPTH,
    Scene,
    dataset_read,
    dataset_write,
    default_intrinsics,
    generate_scene,
    make_pair,
    orbit_pose,
    render,
    render_dataset,
)

K = default_intrinsics(64)


class TestGenerateScene:
    def test_deterministic(self):
        assert generate_scene(42) == generate_scene(42)

    def test_property_sweep(self):
        for seed in range(300):
            scene = generate_scene(seed)
            assert 3 <= len(scene.primitives) <= 10
            for prim in scene.primitives:
                assert all(s > 0 for s in prim.size)
                cx, cy, cz = prim.center
                # inside a 4 m region in front of the reference camera
                assert -2.0 < cx < 2.0 and -2.0 < cy < 2.0
                assert 0.0 < cz - max(prim.size) and cz + max(prim.size) < 4.0

    def test_golden_scene_seed_zero(self):
        scene = generate_scene(0)
        assert len(scene.primitives) == 9
        first = scene.primitives[0]
        assert first.kind == "box"
        assert first.center == pytest.approx(
            (-0.41849480988686374, -0.41659413591678544, 2.9269129140608837)
        )
        assert scene.background == pytest.approx(
            (0.3316561153856121, 0.1110318109858444, 0.2768340816106035)
        )


class TestRender:
    def test_empty_scene_uniform_background(self):
        scene = Scene(primitives=(), background=(0.2, 0.4, 0.6), seed=0)
        frame = render(scene, K, CameraPose.identity())
        from pefield.ppm import quantize

        expected = quantize(np.broadcast_to([0.2, 0.4, 0.6], (64, 64, 3)))
        assert np.array_equal(frame.image, expected)
        assert np.all(frame.depth.values == FAR_DEPTH)
        assert frame.depth.valid.all()

    def test_unit_sphere_center_depth(self):
        # odd-center intrinsics put pixel 31's center exactly on the optical
        # axis; the analytic hit of a unit sphere at z=2 is at depth 1
        from pefield.scenes import Primitive

        k = CameraIntrinsics(fx=64.0, fy=64.0, cx=31.5, cy=31.5, width=64, height=64)
        scene = Scene(
            primitives=(Primitive("sphere", (0.0, 0.0, 2.0), (1.0, 1.0, 1.0), (1.0, 0.0, 0.0)),),
            background=(0.0, 0.0, 0.0),
            seed=0,
        )
        frame = render(scene, k, CameraPose.identity())
        assert frame.depth.values[31, 31] == pytest.approx(1.0, abs=1e-6)

    def test_deterministic(self):
        scene = generate_scene(5)
        a = render(scene, K, CameraPose.identity())
        b = render(scene, K, CameraPose.identity())
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.depth.values, b.depth.values)

    def test_depth_reprojection_consistency(self):
        # warping source pixels with GT depth into the target camera lands on
        # matching colors for >= 98% of unoccluded pixels
        scene = generate_scene(7)
        src, tgt, rel = make_pair(scene, K, CameraPose.identity(), 25.0, 2.5)
        h, w = 64, 64
        ys, xs = np.mgrid[0:h, 0:w]
        z = src.depth.values
        pts = np.stack(
            [
                z * (xs + 0.5 - K.cx) / K.fx,
                z * (ys + 0.5 - K.cy) / K.fy,
                z,
            ],
            axis=-1,
        ).reshape(-1, 3)
        warped = pts @ rel.r.T + rel.t
        zw = warped[:, 2]
        px = K.fx * warped[:, 0] / zw + K.cx
        py = K.fy * warped[:, 1] / zw + K.cy
        ix = np.floor(px).astype(int)
        iy = np.floor(py).astype(int)
        inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h) & (zw > 0)
        ixc, iyc = ix[inside], iy[inside]
        # unoccluded: warped depth agrees with the target's GT depth there
        unoccluded = np.abs(tgt.depth.values[iyc, ixc] - zw[inside]) < 0.05 * zw[inside]
        src_colors = src.image.reshape(-1, 3)[inside][unoccluded]
        tgt_colors = tgt.image[iyc[unoccluded], ixc[unoccluded]]
        err = np.abs(src_colors - tgt_colors).max(axis=1)
        assert unoccluded.sum() > 1000
        assert np.mean(err <= 0.1) >= 0.98


class TestOrbit:
    def test_zero_rotation_identity(self):
        base = CameraPose.identity()
        _, _, rel = make_pair(generate_scene(1), K, base, 0.0, 2.5)
        assert np.allclose(rel.r, np.eye(3), atol=1e-12)
        assert np.allclose(rel.t, 0.0, atol=1e-12)

    def test_rotation_composes_to_identity(self):
        # the pivot stays on the rotated optical axis at the same distance,
        # so orbiting +30 then -30 degrees recovers the base pose
        base = CameraPose.identity()
        again = orbit_pose(orbit_pose(base, 30.0, 3.0), -30.0, 3.0)
        assert np.max(np.abs(again.r - base.r)) <= 1e-9
        assert np.max(np.abs(again.t - base.t)) <= 1e-9

    def test_chord_length(self):
        _, _, rel = make_pair(generate_scene(1), K, CameraPose.identity(), 30.0, 3.0)
        assert np.linalg.norm(rel.t) == pytest.approx(2 * 3.0 * math.sin(math.radians(15)), abs=1e-9)


class TestDataset:
    def test_roundtrip_bit_exact(self, tmp_path):
        dataset = render_dataset(
            n_scenes=2, pairs_per_scene=2, max_rotation_deg=20.0, seed=11, image_size=32
        )
        dataset_write(dataset, tmp_path / "ds")
        back = dataset_read(tmp_path / "ds")
        assert back.z_scale == dataset.z_scale
        assert back.meta == dataset.meta
        assert len(back.records) == len(dataset.records)
        for rec_a, rec_b in zip(dataset.records, back.records):
            assert rec_a.scene == rec_b.scene
            assert len(rec_a.frames) == len(rec_b.frames)
            for fa, fb in zip(rec_a.frames, rec_b.frames):
                assert np.array_equal(fa.image, fb.image)
                assert np.array_equal(fa.depth.values, fb.depth.values)
                assert np.array_equal(fa.depth.valid, fb.depth.valid)
                assert np.array_equal(fa.pose.r, fb.pose.r)
                assert np.array_equal(fa.pose.t, fb.pose.t)
                assert fa.intrinsics == fb.intrinsics
            for pa, pb in zip(rec_a.pairs, rec_b.pairs):
                assert pa.source == pb.source and pa.target == pb.target
                assert np.array_equal(pa.rel.r, pb.rel.r)
                assert np.array_equal(pa.rel.t, pb.rel.t)
                assert pa.angle_deg == pb.angle_deg

    def test_missing_depth_file_named_in_error(self, tmp_path):
        dataset = render_dataset(
            n_scenes=1, pairs_per_scene=1, max_rotation_deg=10.0, seed=1, image_size=32
        )
        dataset_write(dataset, tmp_path / "ds")
        missing = tmp_path / "ds" / "scene_0000" / "frame_01.depth"
        missing.unlink()
        with pytest.raises(FileNotFoundError) as err:
            dataset_read(tmp_path / "ds")
        assert "frame_01.depth" in str(err.value)

    def test_golden_scene_fixture_checksum(self, tmp_path):
        import hashlib

        frame = render(generate_scene(0), K, CameraPose.identity())
        digest = hashlib.sha256(frame.image.tobytes() + frame.depth.values.tobytes())
        assert digest.hexdigest() == (
            "GOLDEN_PLACEHOLDER"
        )

    def test_median_depth_sets_z_scale(self):
        dataset = render_dataset(
            n_scenes=2, pairs_per_scene=1, max_rotation_deg=10.0, seed=3, image_size=32
        )
        assert dataset.z_scale == pytest.approx(dataset.meta["median_depth"] / 8.0)

    def test_manifest_is_human_readable_json(self, tmp_path):
        dataset = render_dataset(
            n_scenes=1, pairs_per_scene=1, max_rotation_deg=10.0, seed=5, image_size=32
        )
        dataset_write(dataset, tmp_path / "ds")
        manifest = json.loads((tmp_path / "ds" / "scene_0000" / "manifest.json").read_text())
        assert {"scene", "camera", "frames", "pairs"} <= manifest.keys()
