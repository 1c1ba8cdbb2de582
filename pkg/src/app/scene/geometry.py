"""Coordinate frames and finite-difference kinematics

Every agent gets a local frame anchored at the last history point and aligned
with its end-of-history heading. Points are mapped into that frame with the
row-vector product ``(p - O) @ R(theta)`` where
``R(theta) = [[cos, -sin], [sin, cos]]``.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from src.core.errors import InvalidInputError

MIN_DISPLACEMENT_M = 1e-6

ArrayLike = Union[np.ndarray, list, tuple]


def wrap_angle(angle):
    """Normalize angles into (-pi, pi]"""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), 2.0 * np.pi)


@dataclass(frozen=True)
class LocalFrame:
    """Agent frame: origin in meters, heading in radians"""

    origin: np.ndarray
    heading: float

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(2)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))


@dataclass(frozen=True)
class Trajectory:
    """Sampled 2-D track"""

    points: np.ndarray
    sample_rate: float

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise InvalidInputError(f"trajectory points must have shape (T, 2), got {points.shape}")
        if points.shape[0] < 2:
            raise InvalidInputError(f"trajectory needs at least 2 points, got {points.shape[0]}")
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("trajectory contains non-finite coordinates")
        if not self.sample_rate > 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Kinematics:
    """Per-sample velocity (m/s) and acceleration (m/s^2)"""

    velocity: np.ndarray
    acceleration: np.ndarray


def heading_from_points(points: np.ndarray) -> float:
    """Direction of the most recent displacement longer than 1e-6 m, else 0"""
    displacements = np.diff(points, axis=0)
    for step in displacements[::-1]:
        if np.hypot(step[0], step[1]) >= MIN_DISPLACEMENT_M:
            return float(np.arctan2(step[1], step[0]))
    return 0.0


def frame_from_history(history: Union[Trajectory, ArrayLike]) -> LocalFrame:
    """Local frame at the end of a history track"""
    points = history.points if isinstance(history, Trajectory) else np.asarray(history, dtype=np.float64)
    if points.ndim != 2 or points.shape[-1] != 2 or points.shape[0] < 2:
        raise InvalidInputError(f"history needs shape (T>=2, 2), got {points.shape}")
    return LocalFrame(origin=points[-1].copy(), heading=heading_from_points(points))


def rotation_matrix(heading) -> np.ndarray:
    """Global-to-local rotation for row vectors, shape (..., 2, 2)"""
    c = np.cos(heading)
    s = np.sin(heading)
    return np.stack(
        [np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)],
        axis=-2,
    )


def rotate_to_local(vectors: np.ndarray, heading) -> np.ndarray:
    """Rotate free vectors (velocities, offsets) into a frame; no translation"""
    vectors = np.asarray(vectors, dtype=np.float64)
    c = np.cos(heading)
    s = np.sin(heading)
    x = vectors[..., 0]
    y = vectors[..., 1]
    return np.stack([x * c + y * s, -x * s + y * c], axis=-1)


def rotate_to_global(vectors: np.ndarray, heading) -> np.ndarray:
    """Inverse of rotate_to_local"""
    vectors = np.asarray(vectors, dtype=np.float64)
    c = np.cos(heading)
    s = np.sin(heading)
    x = vectors[..., 0]
    y = vectors[..., 1]
    return np.stack([x * c - y * s, x * s + y * c], axis=-1)


def to_local(point: ArrayLike, frame: LocalFrame) -> np.ndarray:
    """Map global points (..., 2) into the frame"""
    return rotate_to_local(np.asarray(point, dtype=np.float64) - frame.origin, frame.heading)


def from_local(point: ArrayLike, frame: LocalFrame) -> np.ndarray:
    """Map frame-local points (..., 2) back to global coordinates"""
    return rotate_to_global(point, frame.heading) + frame.origin


def angle_to_local(angle, frame: LocalFrame):
    return wrap_angle(np.asarray(angle, dtype=np.float64) - frame.heading)


@lru_cache(maxsize=64)
def _difference_matrix(length: int, sample_rate: float) -> np.ndarray:
    matrix = np.zeros((length, length), dtype=np.float64)
    matrix[0, 0], matrix[0, 1] = -1.0, 1.0
    matrix[-1, -2], matrix[-1, -1] = -1.0, 1.0
    for t in range(1, length - 1):
        matrix[t, t - 1] = -0.5
        matrix[t, t + 1] = 0.5
    matrix *= sample_rate
    matrix.setflags(write=False)
    return matrix


def difference_matrix(length: int, sample_rate: float) -> np.ndarray:
    """Velocity operator: central rows inside, one-sided first and last rows

    ``difference_matrix(T, r) @ points`` gives the per-sample velocity of a
    (T, 2) track sampled at r Hz. The returned array is read-only.
    """
    if length < 2:
        raise InvalidInputError(f"difference operator needs at least 2 samples, got {length}")
    return _difference_matrix(int(length), float(sample_rate))


def kinematics(traj: Trajectory) -> Kinematics:
    """Velocity and acceleration of a trajectory

    Acceleration applies the same difference operator to the velocity, so it
    needs at least 3 samples.
    """
    if len(traj) < 3:
        raise InvalidInputError(f"kinematics needs at least 3 samples, got {len(traj)}")
    operator = difference_matrix(len(traj), traj.sample_rate)
    velocity = operator @ traj.points
    acceleration = operator @ velocity
    return Kinematics(velocity=velocity, acceleration=acceleration)


def velocity(traj: Trajectory) -> np.ndarray:
    """Velocity only; valid from 2 samples"""
    return difference_matrix(len(traj), traj.sample_rate) @ traj.points
