"""Quaternion/MRP conversions, rigid transforms, centroid framing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspdiff.geometry import (RigidTransform, centroid_frame, h_to_pose,
                                mrp_to_quat, pose_to_h, quat_canonical,
                                quat_from_axis_angle, quat_from_matrix,
                                quat_mul, quat_normalize, quat_rotate,
                                quat_to_matrix, quat_to_mrp, random_rotation)

unit_floats = st.floats(-1.0, 1.0, allow_nan=False)


def _random_canonical(rng):
    return quat_canonical(quat_normalize(rng.normal(size=4)))


class TestMrp:
    def test_identity(self):
        assert np.array_equal(quat_to_mrp(np.array([1.0, 0, 0, 0])), np.zeros(3))

    def test_z_flip_exact(self):
        # 180 degrees about z, evaluated at q_w = 0
        assert np.array_equal(quat_to_mrp(np.array([0.0, 0, 0, 1.0])),
                              np.array([0.0, 0.0, 4.0]))

    def test_90deg_x(self):
        q = np.array([np.sqrt(2) / 2, np.sqrt(2) / 2, 0.0, 0.0])
        a = quat_to_mrp(q)
        assert a == pytest.approx([4 * np.sqrt(2) - 4, 0.0, 0.0], abs=1e-12)

    def test_inverse_spot(self):
        q = mrp_to_quat(np.array([0.0, 0.0, 4.0]))
        assert q == pytest.approx([0.0, 0.0, 0.0, 1.0], abs=1e-15)

    def test_w_minus_one_rejected(self):
        with pytest.raises(ValueError):
            quat_to_mrp(np.array([-1.0, 0.0, 0.0, 0.0]))

    def test_roundtrip_10k(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(10_000):
            q = _random_canonical(rng)
            back = mrp_to_quat(quat_to_mrp(q))
            worst = max(worst, float(np.abs(back - q).max()))
        assert worst < 1e-9

    def test_norm_bound_on_canonical_hemisphere(self):
        rng = np.random.default_rng(6)
        norms = [np.linalg.norm(quat_to_mrp(_random_canonical(rng)))
                 for _ in range(2000)]
        assert max(norms) <= 4.0 + 1e-12

    @given(st.lists(unit_floats, min_size=4, max_size=4))
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_property(self, comps):
        v = np.array(comps)
        if np.linalg.norm(v) < 1e-3:
            return
        q = quat_canonical(quat_normalize(v))
        back = mrp_to_quat(quat_to_mrp(q))
        # at w ~ 0 (hemisphere boundary) the roundtrip may return the
        # sign-flipped representative of the same rotation
        err = min(np.abs(back - q).max(), np.abs(back + q).max())
        assert err < 1e-9

    def test_custom_scale_roundtrip(self):
        rng = np.random.default_rng(7)
        q = _random_canonical(rng)
        assert np.abs(mrp_to_quat(quat_to_mrp(q, scale=1.0), scale=1.0) - q).max() < 1e-12


class TestCanonicalization:
    def test_negative_w_flipped(self):
        q = quat_canonical(np.array([-0.5, 0.5, 0.5, 0.5]))
        assert q[0] > 0

    def test_tie_at_zero_w(self):
        q = quat_canonical(np.array([0.0, -1.0, 0.0, 0.0]))
        assert q[1] > 0

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            quat_normalize(np.zeros(4))


class TestRandomRotation:
    def test_unit_and_canonical(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            q = random_rotation(rng)
            assert abs(np.linalg.norm(q) - 1.0) < 1e-9
            assert q[0] >= 0

    def test_axis_marginal_centered(self):
        # axis components should average to ~0 (uniform sphere)
        rng = np.random.default_rng(2)
        n = 100_000
        qs = np.stack([random_rotation(rng) for _ in range(n)])
        axes = qs[:, 1:] / np.maximum(np.linalg.norm(qs[:, 1:], axis=1, keepdims=True), 1e-12)
        # component variance of a uniform direction is 1/3
        tol = 3.0 * np.sqrt(1.0 / 3.0 / n)
        assert np.abs(axes.mean(axis=0)).max() < tol

    def test_reproducible(self):
        a = [random_rotation(np.random.default_rng(9)) for _ in range(5)]
        b = [random_rotation(np.random.default_rng(9)) for _ in range(5)]
        assert np.array_equal(np.stack(a), np.stack(b))


class TestRotationAlgebra:
    def test_composition_matches_sequential_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            q1, q2 = _random_canonical(rng), _random_canonical(rng)
            p = rng.normal(size=3)
            seq = quat_rotate(q2, quat_rotate(q1, p))
            combined = quat_rotate(quat_mul(q2, q1), p)
            assert np.abs(seq - combined).max() < 1e-9

    def test_matrix_roundtrip(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            q = _random_canonical(rng)
            assert np.abs(quat_from_matrix(quat_to_matrix(q)) - q).max() < 1e-9

    def test_axis_angle(self):
        q = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        assert quat_rotate(q, [1.0, 0.0, 0.0]) == pytest.approx([0, 1, 0], abs=1e-12)


class TestRigidTransform:
    def test_compose_apply_consistency(self):
        rng = np.random.default_rng(8)
        t1 = RigidTransform(_random_canonical(rng), rng.normal(size=3))
        t2 = RigidTransform(_random_canonical(rng), rng.normal(size=3))
        p = rng.normal(size=(10, 3))
        assert np.allclose(t1.compose(t2).apply(p), t1.apply(t2.apply(p)), atol=1e-12)

    def test_inverse(self):
        rng = np.random.default_rng(9)
        t = RigidTransform(_random_canonical(rng), rng.normal(size=3))
        p = rng.normal(size=(5, 3))
        assert np.allclose(t.inverse().apply(t.apply(p)), p, atol=1e-12)

    def test_seven_float_serialization(self):
        rng = np.random.default_rng(10)
        t = RigidTransform(_random_canonical(rng), rng.normal(size=3))
        arr = t.as_array7()
        assert arr.shape == (7,)
        back = RigidTransform.from_array7(arr)
        assert np.array_equal(back.as_array7(), arr)

    def test_bad_pose_array_rejected(self):
        with pytest.raises(ValueError):
            RigidTransform.from_array7(np.zeros(6))

    def test_pose6_roundtrip(self):
        rng = np.random.default_rng(11)
        t = RigidTransform(_random_canonical(rng), rng.normal(size=3))
        h = pose_to_h(t)
        assert h.shape == (6,)
        back = h_to_pose(h)
        assert np.abs(back.as_array7() - t.as_array7()).max() < 1e-9


class TestCentroidFrame:
    def test_already_centered_identity(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 2.0, 0], [0, -2.0, 0]])
        out, grasps, offset = centroid_frame(pts, [])
        assert np.array_equal(offset, np.zeros(3))
        assert np.array_equal(out, pts)

    def test_shift_recovered(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0]]) + np.array([0.3, -0.2, 0.7])
        out, grasps, offset = centroid_frame(
            pts, [RigidTransform(np.array([1.0, 0, 0, 0]), np.zeros(3))])
        assert offset == pytest.approx([0.3, -0.2, 0.7])
        assert grasps[0].translation == pytest.approx([-0.3, 0.2, -0.7])

    def test_random_clouds_recentered(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            pts = rng.normal(size=(rng.integers(3, 200), 3)) * 10
            out, _, _ = centroid_frame(pts)
            assert np.abs(out.mean(axis=0)).max() < 1e-7

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            centroid_frame(np.zeros((0, 3)))
