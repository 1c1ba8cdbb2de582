"""Tests for frames, transforms and finite-difference kinematics"""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from src.app.scene.geometry import (
    LocalFrame,
    Trajectory,
    angle_to_local,
    difference_matrix,
    frame_from_history,
    from_local,
    kinematics,
    rotate_to_global,
    rotate_to_local,
    rotation_matrix,
    to_local,
    velocity,
    wrap_angle,
)
from src.core.errors import InvalidInputError

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
angles = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)


@pytest.mark.unit
class TestFrameFromHistory:
    def test_axis_aligned_motion(self):
        frame = frame_from_history([(0, 0), (1, 0)])
        np.testing.assert_array_equal(frame.origin, [1.0, 0.0])
        assert frame.heading == 0.0

    def test_northward_motion(self):
        frame = frame_from_history([(0, 0), (0, 2)])
        np.testing.assert_array_equal(frame.origin, [0.0, 2.0])
        assert frame.heading == pytest.approx(math.pi / 2)

    def test_degenerate_history_falls_back_to_zero(self):
        frame = frame_from_history([(5, 5), (5, 5)])
        np.testing.assert_array_equal(frame.origin, [5.0, 5.0])
        assert frame.heading == 0.0

    def test_stationary_tail_uses_last_real_displacement(self):
        frame = frame_from_history([(0, 0), (0, -3), (0, -3)])
        assert frame.heading == pytest.approx(-math.pi / 2)

    def test_too_short_history(self):
        with pytest.raises(InvalidInputError):
            frame_from_history([(0, 0)])

    def test_accepts_trajectory(self):
        frame = frame_from_history(Trajectory(points=[(0, 0), (-1, 0)], sample_rate=10.0))
        assert frame.heading == pytest.approx(math.pi)


@pytest.mark.unit
class TestTransforms:
    def test_identity_frame(self):
        frame = LocalFrame(origin=(0, 0), heading=0.0)
        np.testing.assert_allclose(to_local((3, 4), frame), [3.0, 4.0])

    def test_quarter_turn(self):
        frame = LocalFrame(origin=(1, 1), heading=math.pi / 2)
        np.testing.assert_allclose(to_local((1, 2), frame), [1.0, 0.0], atol=1e-12)

    def test_heading_is_wrapped(self):
        frame = LocalFrame(origin=(0, 0), heading=3 * math.pi)
        assert frame.heading == pytest.approx(math.pi)
        assert LocalFrame(origin=(0, 0), heading=-math.pi).heading == pytest.approx(math.pi)

    def test_rotation_matrix_matches_rotate_to_local(self):
        rng = np.random.default_rng(1)
        vectors = rng.normal(size=(6, 2))
        headings = rng.uniform(-math.pi, math.pi, size=6)
        by_matrix = np.einsum("ni,nij->nj", vectors, rotation_matrix(headings))
        np.testing.assert_allclose(by_matrix, rotate_to_local(vectors, headings), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(x=finite, y=finite, ox=finite, oy=finite, heading=angles)
    def test_round_trip(self, x, y, ox, oy, heading):
        frame = LocalFrame(origin=(ox, oy), heading=heading)
        back = from_local(to_local((x, y), frame), frame)
        np.testing.assert_allclose(back, [x, y], atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(heading=angles)
    def test_distances_preserved(self, heading):
        rng = np.random.default_rng(0)
        p, q = rng.uniform(-100, 100, size=(2, 2))
        frame = LocalFrame(origin=rng.uniform(-10, 10, size=2), heading=heading)
        before = np.linalg.norm(p - q)
        after = np.linalg.norm(to_local(p, frame) - to_local(q, frame))
        assert after == pytest.approx(before, abs=1e-9)

    def test_global_inverts_local_rotation(self):
        vectors = np.array([[1.0, 2.0], [-3.0, 0.5]])
        np.testing.assert_allclose(rotate_to_global(rotate_to_local(vectors, 0.7), 0.7), vectors, atol=1e-12)

    def test_angle_to_local(self):
        frame = LocalFrame(origin=(5, -2), heading=math.pi / 2)
        assert angle_to_local(math.pi / 2, frame) == pytest.approx(0.0)
        assert angle_to_local(0.0, frame) == pytest.approx(-math.pi / 2)
        # -pi/2 - pi/2 wraps to +pi
        assert angle_to_local(-math.pi / 2, frame) == pytest.approx(math.pi)
        np.testing.assert_allclose(angle_to_local([math.pi, 3 * math.pi], frame), [math.pi / 2, math.pi / 2])

    @settings(max_examples=50, deadline=None)
    @given(x=finite, y=finite, heading=angles)
    def test_angle_to_local_matches_rotated_direction(self, x, y, heading):
        assume(math.hypot(x, y) > 1e-3)
        frame = LocalFrame(origin=(0, 0), heading=heading)
        local = rotate_to_local(np.array([x, y]), frame.heading)
        expected = math.atan2(local[1], local[0])
        delta = wrap_angle(angle_to_local(math.atan2(y, x), frame) - expected)
        assert abs(float(delta)) < 1e-9

    def test_wrap_angle_range(self):
        wrapped = wrap_angle(np.linspace(-10, 10, 101))
        assert np.all(wrapped > -math.pi) and np.all(wrapped <= math.pi)
        assert wrap_angle(math.pi) == pytest.approx(math.pi)


@pytest.mark.unit
class TestKinematics:
    def test_uniform_motion(self):
        t = np.arange(12) / 10.0
        traj = Trajectory(points=np.stack([t, np.zeros_like(t)], axis=-1), sample_rate=10.0)
        kin = kinematics(traj)
        np.testing.assert_allclose(kin.velocity, np.tile([1.0, 0.0], (12, 1)), atol=1e-12)
        np.testing.assert_allclose(kin.acceleration, 0.0, atol=1e-9)

    def test_unit_steps_at_ten_hertz(self):
        steps = np.arange(8, dtype=np.float64)
        traj = Trajectory(points=np.stack([steps, np.zeros(8)], axis=-1), sample_rate=10.0)
        np.testing.assert_allclose(kinematics(traj).velocity, np.tile([10.0, 0.0], (8, 1)))

    def test_static(self):
        traj = Trajectory(points=np.ones((5, 2)), sample_rate=10.0)
        kin = kinematics(traj)
        assert np.all(kin.velocity == 0) and np.all(kin.acceleration == 0)

    def test_quadratic_acceleration_interior(self):
        rate = 100.0
        t = np.arange(50) / rate
        traj = Trajectory(points=np.stack([0.5 * 3.0 * t ** 2, np.zeros_like(t)], axis=-1), sample_rate=rate)
        acc = kinematics(traj).acceleration
        # two central differences reach 2 samples in from each end
        np.testing.assert_allclose(acc[2:-2, 0], 3.0, atol=1e-6)

    def test_rigid_transform_rotates_kinematics(self):
        rng = np.random.default_rng(3)
        points = np.cumsum(rng.normal(size=(15, 2)), axis=0)
        angle = 0.9
        c, s = math.cos(angle), math.sin(angle)
        rotation = np.array([[c, s], [-s, c]])
        moved = points @ rotation + np.array([40.0, -7.0])
        original = kinematics(Trajectory(points=points, sample_rate=10.0))
        transformed = kinematics(Trajectory(points=moved, sample_rate=10.0))
        np.testing.assert_allclose(transformed.velocity, original.velocity @ rotation, atol=1e-9)
        np.testing.assert_allclose(transformed.acceleration, original.acceleration @ rotation, atol=1e-9)

    def test_too_short_for_acceleration(self):
        traj = Trajectory(points=[(0, 0), (1, 0)], sample_rate=10.0)
        with pytest.raises(InvalidInputError):
            kinematics(traj)
        np.testing.assert_allclose(velocity(traj), [[10.0, 0.0], [10.0, 0.0]])

    def test_difference_matrix_is_read_only(self):
        matrix = difference_matrix(4, 10.0)
        with pytest.raises(ValueError):
            matrix[0, 0] = 1.0


@pytest.mark.unit
class TestTrajectoryValidation:
    @pytest.mark.parametrize(
        "points",
        [
            [(0, 0)],
            [(0, 0, 0), (1, 1, 1)],
            [(0, 0), (float("nan"), 1)],
        ],
    )
    def test_rejects_bad_points(self, points):
        with pytest.raises(InvalidInputError):
            Trajectory(points=points, sample_rate=10.0)

    def test_rejects_bad_rate(self):
        with pytest.raises(InvalidInputError):
            Trajectory(points=[(0, 0), (1, 0)], sample_rate=0.0)
