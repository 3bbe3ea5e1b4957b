"""Rotary encoding tests: isometry, relative-position invariance, axis splits."""

import numpy as np
import pytest

from pefield.rope import RopeAxisSplit, apply_rope3d, axis_split, pair_angles, rope_rotate


class TestAxisSplit:
    def test_equal_thirds(self):
        s = axis_split(12, depth_aware=True)
        assert (s.dx, s.dy, s.dz) == (4, 4, 4)

    def test_remainder_goes_to_depth(self):
        s = axis_split(8, depth_aware=True)
        assert (s.dx, s.dy, s.dz) == (2, 2, 4)

    def test_planar_split(self):
        s = axis_split(16, depth_aware=False)
        assert (s.dx, s.dy, s.dz) == (8, 8, 0)

    def test_rejects_odd(self):
        with pytest.raises(ValueError):
            axis_split(7, depth_aware=False)

    def test_rejects_small_depth_aware(self):
        with pytest.raises(ValueError):
            axis_split(4, depth_aware=True)

    def test_segments_always_even_and_sum(self):
        for d in range(6, 65, 2):
            for aware in (True, False):
                s = axis_split(d, aware)
                assert s.dx + s.dy + s.dz == d
                assert s.dx % 2 == s.dy % 2 == s.dz % 2 == 0
                assert (s.dz > 0) == aware

    def test_invalid_widths_rejected(self):
        with pytest.raises(ValueError):
            RopeAxisSplit(8, 3, 3, 2)
        with pytest.raises(ValueError):
            RopeAxisSplit(8, 4, 4, 2)


class TestRopeRotate:
    def test_zero_position_is_identity(self):
        seg = np.arange(8.0)
        assert np.array_equal(rope_rotate(seg, 0.0), seg)

    def test_single_pair_quarter_turn(self):
        out = rope_rotate(np.array([1.0, 0.0]), np.pi / 2)
        assert np.allclose(out, [0.0, 1.0], atol=1e-15)

    def test_rejects_odd_length(self):
        with pytest.raises(ValueError):
            rope_rotate(np.ones(3), 1.0)

    def test_rejects_bad_freq_base(self):
        with pytest.raises(ValueError):
            rope_rotate(np.ones(4), 1.0, freq_base=1.0)

    def test_isometry(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            seg = rng.normal(size=16)
            pos = rng.uniform(-50, 50)
            out = rope_rotate(seg, pos)
            assert abs(np.linalg.norm(out) - np.linalg.norm(seg)) <= 1e-12 * np.linalg.norm(seg)

    def test_relative_position_1d(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            q, k = rng.normal(size=8), rng.normal(size=8)
            a, b, delta = rng.uniform(-20, 20, size=3)
            ref = np.dot(rope_rotate(q, a), rope_rotate(k, b))
            shifted = np.dot(rope_rotate(q, a + delta), rope_rotate(k, b + delta))
            worst = max(worst, abs(ref - shifted) / max(abs(ref), 1e-30))
        assert worst <= 1e-9


class TestApplyRope3d:
    def setup_method(self):
        self.split = axis_split(12, depth_aware=True)

    def test_zero_coords_identity(self):
        rng = np.random.default_rng(0)
        q, k = rng.normal(size=12), rng.normal(size=12)
        qr, kr = apply_rope3d(q, k, (0, 0, 0), (0, 0, 0), self.split)
        assert np.array_equal(qr, q) and np.array_equal(kr, k)

    def test_planar_split_matches_2d(self):
        # dz=0 behaves exactly like a standard 2D rope on the same inputs
        rng = np.random.default_rng(1)
        q, k = rng.normal(size=8), rng.normal(size=8)
        split2d = axis_split(8, depth_aware=False)
        qr, kr = apply_rope3d(q, k, (1.5, -2.0, 99.0), (0.5, 3.0, -7.0), split2d)
        q_expected = np.concatenate([rope_rotate(q[:4], 1.5), rope_rotate(q[4:], -2.0)])
        k_expected = np.concatenate([rope_rotate(k[:4], 0.5), rope_rotate(k[4:], 3.0)])
        assert np.array_equal(qr, q_expected)
        assert np.array_equal(kr, k_expected)

    def test_relative_position_3d(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(1000):
            q, k = rng.normal(size=12), rng.normal(size=12)
            pq = rng.uniform(-10, 10, size=3)
            pk = rng.uniform(-10, 10, size=3)
            shift = rng.uniform(-10, 10, size=3)
            qr, kr = apply_rope3d(q, k, pq, pk, self.split)
            qs, ks = apply_rope3d(q, k, pq + shift, pk + shift, self.split)
            ref, shifted = np.dot(qr, kr), np.dot(qs, ks)
            worst = max(worst, abs(ref - shifted) / max(abs(ref), 1e-30))
        assert worst <= 1e-9

    def test_zero_depth_matches_padded_planar(self):
        # z == 0 everywhere degenerates to a dz=0 configuration whose
        # z-segment is simply never rotated
        rng = np.random.default_rng(3)
        q, k = rng.normal(size=12), rng.normal(size=12)
        pq, pk = (1.0, -2.5, 0.0), (3.5, 0.5, 0.0)
        qr, kr = apply_rope3d(q, k, pq, pk, self.split)
        qx = np.concatenate(
            [rope_rotate(q[:4], 1.0), rope_rotate(q[4:8], -2.5), q[8:]]
        )
        kx = np.concatenate(
            [rope_rotate(k[:4], 3.5), rope_rotate(k[4:8], 0.5), k[8:]]
        )
        assert np.dot(qr, kr) == pytest.approx(np.dot(qx, kx), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_rope3d(np.ones(10), np.ones(12), (0, 0, 0), (0, 0, 0), self.split)


class TestPairAngles:
    def test_matches_segmentwise_rotation(self):
        # rotating via cos/sin of pair_angles equals apply_rope3d exactly
        rng = np.random.default_rng(4)
        split = axis_split(12, depth_aware=True)
        q, k = rng.normal(size=12), rng.normal(size=12)
        pq, pk = rng.uniform(-5, 5, size=3), rng.uniform(-5, 5, size=3)
        qr, kr = apply_rope3d(q, k, pq, pk, split)
        for vec, pos, ref in ((q, pq, qr), (k, pk, kr)):
            theta = pair_angles(pos, split)
            pairs = vec.reshape(-1, 2)
            out = np.empty_like(pairs)
            out[:, 0] = pairs[:, 0] * np.cos(theta) - pairs[:, 1] * np.sin(theta)
            out[:, 1] = pairs[:, 0] * np.sin(theta) + pairs[:, 1] * np.cos(theta)
            assert np.allclose(out.reshape(-1), ref, atol=1e-15)

    def test_planar_split_has_no_z_angles(self):
        split = axis_split(8, depth_aware=False)
        theta = pair_angles(np.array([1.0, 2.0, 99.0]), split)
        theta_other_z = pair_angles(np.array([1.0, 2.0, -5.0]), split)
        assert theta.shape == (4,)
        assert np.array_equal(theta, theta_other_z)

    def test_batched_shape(self):
        split = axis_split(12, depth_aware=True)
        coords = np.zeros((7, 24, 3))
        assert pair_angles(coords, split).shape == (7, 24, 6)
