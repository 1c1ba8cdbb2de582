"""Braid and soft-braid topology between trajectories and lanes

Hard braid crossings, soft intersection points and the soft-braid feature
records, plus radius neighborhoods. The vectorized functions at the top work
on stacks of trajectories (any leading dimensions); the pair-level functions
below them wrap the same code for single trajectories.

Conventions:
    * argmin ties resolve to the smallest time index, then the smallest lane
      vertex index
    * an angle whose distance is below ``ZERO_DISTANCE_M`` is 0
    * lane distance is measured to polyline vertices, not segments
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.app.scene.geometry import (
    Kinematics,
    LocalFrame,
    Trajectory,
    angle_to_local,
    rotate_to_local,
)
from src.core.errors import InvalidInputError

ZERO_DISTANCE_M = 1e-9
TT_FEATURE_DIM = 10
TL_FEATURE_DIM = 6

PointsLike = Union[Trajectory, np.ndarray, Sequence]


# ============================================================================
# Records
# ============================================================================

@dataclass(frozen=True)
class SoftIntersection:
    """Closest same-time pair of points (or waypoint / lane vertex pair)"""

    time_index: int
    p_self: np.ndarray
    p_other: np.ndarray
    distance: float
    angle_global: float
    vertex_index: Optional[int] = None


@dataclass(frozen=True)
class SoftBraidTT:
    """Soft-braid record of another trajectory seen from a receiving agent"""

    v_self: np.ndarray
    v_other: np.ndarray
    a_self: np.ndarray
    a_other: np.ndarray
    distance: float
    angle: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.v_self, self.v_other, self.a_self, self.a_other, [self.distance, self.angle]]
        )


@dataclass(frozen=True)
class SoftBraidTL:
    """Soft-braid record of a lane seen from an agent"""

    v: np.ndarray
    a: np.ndarray
    distance: float
    angle: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.a, [self.distance, self.angle]])


@dataclass(frozen=True)
class NeighborSet:
    """Ascending neighbor indices for every query index"""

    members: Tuple[Tuple[int, ...], ...]

    def __getitem__(self, index: int) -> Tuple[int, ...]:
        return self.members[index]

    def __len__(self) -> int:
        return len(self.members)

    def as_lists(self) -> List[List[int]]:
        return [list(m) for m in self.members]


# ============================================================================
# Vectorized kernels
# ============================================================================

def pairwise_soft_intersections(trajs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Soft intersection indices and distances for every ordered pair

    Args:
        trajs: (..., N, T, 2) trajectories sharing a time axis

    Returns:
        time_index (..., N, N) and distance (..., N, N); both symmetric in the
        two agent axes.
    """
    diff = trajs[..., None, :, :, :] - trajs[..., :, None, :, :]
    dist_t = np.hypot(diff[..., 0], diff[..., 1])
    time_index = np.argmin(dist_t, axis=-1)
    distance = np.take_along_axis(dist_t, time_index[..., None], axis=-1)[..., 0]
    return time_index, distance


def lane_soft_intersections(
    trajs: np.ndarray,
    vertices: np.ndarray,
    vertex_mask: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closest (timestep, lane vertex) pair for every agent and lane

    Args:
        trajs: (..., N, T, 2)
        vertices: (M, V, 2) lane vertices, padded to a common V
        vertex_mask: (M, V) True for real vertices

    Returns:
        time_index, vertex_index and distance, each (..., N, M). Lanes without
        any real vertex get distance +inf.
    """
    diff = vertices[:, None, :, :] - trajs[..., :, None, :, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if vertex_mask is not None:
        dist = np.where(vertex_mask[:, None, :], dist, np.inf)
    per_time = dist.min(axis=-1)
    time_index = np.argmin(per_time, axis=-1)
    at_time = np.take_along_axis(dist, time_index[..., None, None], axis=-2)[..., 0, :]
    vertex_index = np.argmin(at_time, axis=-1)
    distance = np.take_along_axis(at_time, vertex_index[..., None], axis=-1)[..., 0]
    return time_index, vertex_index, distance


def braid_crossings(trajs: np.ndarray, epsilon: float) -> np.ndarray:
    """Hard braid indicator for every ordered pair

    ``result[..., i, j]`` is 1 when some ``0 < t_i < t_j`` puts agent i at
    ``t_i`` within ``epsilon`` of agent j at ``t_j``. The diagonal is 0.
    """
    if not epsilon > 0:
        raise InvalidInputError(f"braid epsilon must be positive, got {epsilon}")
    length = trajs.shape[-2]
    diff = trajs[..., :, None, :, None, :] - trajs[..., None, :, None, :, :]
    close = np.hypot(diff[..., 0], diff[..., 1]) < epsilon
    steps = np.arange(length)
    ordered = (steps[:, None] < steps[None, :]) & (steps[:, None] > 0)
    crossing = np.any(close & ordered, axis=(-1, -2)).astype(np.int64)
    n = trajs.shape[-3]
    crossing[..., np.arange(n), np.arange(n)] = 0
    return crossing


def neighbor_mask(distances: np.ndarray, tau: float, exclude_self: bool = True) -> np.ndarray:
    """Boolean membership ``d <= tau`` with the diagonal optionally cleared"""
    mask = np.asarray(distances) <= tau
    if exclude_self:
        n = mask.shape[-1]
        if mask.shape[-2] != n:
            raise InvalidInputError("exclude_self needs a square distance matrix")
        mask = mask & ~np.eye(n, dtype=bool)
    return mask


def neighborhoods(distances: np.ndarray, tau: float, exclude_self: bool = True) -> NeighborSet:
    """Neighbor index lists per query row

    Use ``exclude_self=False`` for agent-to-lane matrices.
    """
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 2:
        raise InvalidInputError(f"distance matrix must be 2-D, got {distances.shape}")
    mask = neighbor_mask(distances, tau, exclude_self=exclude_self)
    return NeighborSet(members=tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in mask))


# ============================================================================
# Pair-level operations
# ============================================================================

def _points(traj: PointsLike) -> np.ndarray:
    points = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if points.ndim != 2 or points.shape[-1] != 2:
        raise InvalidInputError(f"expected (T, 2) points, got {points.shape}")
    return points


def _same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise InvalidInputError(
            f"trajectories must share a length, got {a.shape[0]} and {b.shape[0]}"
        )


def _direction(vector: np.ndarray, distance: float) -> float:
    if distance < ZERO_DISTANCE_M:
        return 0.0
    return float(np.arctan2(vector[1], vector[0]))


def soft_intersection_tt(traj_i: PointsLike, traj_j: PointsLike) -> SoftIntersection:
    """Same-time closest points of two trajectories"""
    yi, yj = _points(traj_i), _points(traj_j)
    _same_length(yi, yj)
    time_index, distance = pairwise_soft_intersections(np.stack([yi, yj]))
    t = int(time_index[0, 1])
    d = float(distance[0, 1])
    return SoftIntersection(
        time_index=t,
        p_self=yi[t].copy(),
        p_other=yj[t].copy(),
        distance=d,
        angle_global=_direction(yj[t] - yi[t], d),
    )


def soft_braid_tt(
    traj_i: PointsLike,
    traj_j: PointsLike,
    kin_i: Kinematics,
    kin_j: Kinematics,
    frame_i: LocalFrame,
    frame_j: LocalFrame,
) -> Tuple[SoftBraidTT, SoftBraidTT]:
    """Soft-braid records for i<-j and j<-i

    The j<-i angle carries the minus sign of the literal formulation rather
    than the direction of the reversed vector.
    """
    hit = soft_intersection_tt(traj_i, traj_j)
    t, d = hit.time_index, hit.distance
    if d < ZERO_DISTANCE_M:
        angle_ij = angle_ji = 0.0
    else:
        angle_ij = float(angle_to_local(hit.angle_global, frame_i))
        angle_ji = -float(angle_to_local(hit.angle_global, frame_j))

    i_from_j = SoftBraidTT(
        v_self=rotate_to_local(kin_i.velocity[t], frame_i.heading),
        v_other=rotate_to_local(kin_j.velocity[t], frame_i.heading),
        a_self=rotate_to_local(kin_i.acceleration[t], frame_i.heading),
        a_other=rotate_to_local(kin_j.acceleration[t], frame_i.heading),
        distance=d,
        angle=angle_ij,
    )
    j_from_i = SoftBraidTT(
        v_self=rotate_to_local(kin_j.velocity[t], frame_j.heading),
        v_other=rotate_to_local(kin_i.velocity[t], frame_j.heading),
        a_self=rotate_to_local(kin_j.acceleration[t], frame_j.heading),
        a_other=rotate_to_local(kin_i.acceleration[t], frame_j.heading),
        distance=d,
        angle=angle_ji,
    )
    return i_from_j, j_from_i


def soft_intersection_tl(traj_i: PointsLike, lane: PointsLike) -> SoftIntersection:
    """Waypoint of a trajectory closest to any vertex of a lane polyline"""
    yi = _points(traj_i)
    vertices = np.asarray(lane, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[0] < 1 or vertices.shape[-1] != 2:
        raise InvalidInputError(f"lane needs shape (P>=1, 2), got {vertices.shape}")
    time_index, vertex_index, distance = lane_soft_intersections(yi[None], vertices[None])
    t = int(time_index[0, 0])
    v = int(vertex_index[0, 0])
    d = float(distance[0, 0])
    return SoftIntersection(
        time_index=t,
        p_self=yi[t].copy(),
        p_other=vertices[v].copy(),
        distance=d,
        angle_global=_direction(vertices[v] - yi[t], d),
        vertex_index=v,
    )


def soft_braid_tl(
    traj_i: PointsLike,
    lane: PointsLike,
    kin_i: Kinematics,
    frame_i: LocalFrame,
) -> SoftBraidTL:
    """Soft-braid record of a lane in agent i's frame"""
    hit = soft_intersection_tl(traj_i, lane)
    t, d = hit.time_index, hit.distance
    angle = 0.0 if d < ZERO_DISTANCE_M else float(angle_to_local(hit.angle_global, frame_i))
    return SoftBraidTL(
        v=rotate_to_local(kin_i.velocity[t], frame_i.heading),
        a=rotate_to_local(kin_i.acceleration[t], frame_i.heading),
        distance=d,
        angle=angle,
    )


def braid_crossing(traj_i: PointsLike, traj_j: PointsLike, epsilon: float = 2.0) -> Tuple[int, int]:
    """Hard braid bits (sigma_i<-j, sigma_j<-i) by exhaustive pair scan"""
    yi, yj = _points(traj_i), _points(traj_j)
    _same_length(yi, yj)
    crossing = braid_crossings(np.stack([yi, yj]), epsilon)
    return int(crossing[0, 1]), int(crossing[1, 0])
