"""Soft-braid topology features inside the autodiff graph

The argmin time indices, lane vertex choices, neighbor masks and braid bits
come from the numpy kernels in ``src.app.scene.topology`` and are treated as
constants. Velocities, accelerations, distances and angles at those indices
are built from autodiff ops, so gradients flow from the features back into
the trajectories of the previous refinement iteration.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from src.app.nn.autodiff import Tensor, as_tensor, atan2, concat, matmul, norm, wrap_angle
from src.app.refiner.batching import SceneBatch
from src.app.scene.geometry import difference_matrix
from src.app.scene.topology import (
    TL_FEATURE_DIM,
    TT_FEATURE_DIM,
    ZERO_DISTANCE_M,
    braid_crossings,
    lane_soft_intersections,
    neighbor_mask,
    pairwise_soft_intersections,
)
from src.config.run_config import RefinerConfig


@dataclass
class SceneTopology:
    """Features and neighbor masks for one refinement iteration"""

    tt_features: Tensor  # (B, K, N, N, 10)
    tt_mask: np.ndarray  # (B, K, N, N)
    tt_distance: np.ndarray  # (B, K, N, N)
    tl_features: Tensor  # (B, K, N, M, 6)
    tl_mask: np.ndarray  # (B, K, N, M)
    tl_distance: np.ndarray  # (B, K, N, M)


def rotate_rows(vectors: Tensor, rotations: np.ndarray) -> Tensor:
    """Apply (..., 2, 2) row-vector rotations to (..., 2) vectors"""
    shape = vectors.shape
    rotated = matmul(vectors.reshape(shape[:-1] + (1, 2)), rotations)
    return rotated.reshape(shape)


def _kinematics(trajs: Tensor, sample_rate: float):
    operator = Tensor(difference_matrix(trajs.shape[-2], sample_rate))
    velocity = matmul(operator, trajs)
    return velocity, matmul(operator, velocity)


def _grid(shape):
    return np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")


def tt_topology(trajs: Tensor, batch: SceneBatch, config: RefinerConfig):
    """Trajectory-trajectory features, mask and distances

    Entry ``[..., a, b, :]`` is agent b seen from agent a. The pair (a, b)
    with a < b is the canonical evaluation order; the reversed entry carries
    the negated angle.
    """
    y = trajs.data
    B, K, N = y.shape[:3]
    time_index, distance = pairwise_soft_intersections(y)
    valid = batch.agent_mask[:, None, :, None] & batch.agent_mask[:, None, None, :]
    mask = neighbor_mask(distance, config.tau_a) & valid

    if config.topology_mode == "none":
        return Tensor(np.zeros((B, K, N, N, TT_FEATURE_DIM))), mask, distance

    if config.topology_mode == "braid":
        crossing = braid_crossings(y, config.braid_epsilon)
        crossing_t = np.swapaxes(crossing, -1, -2)
        features = np.zeros((B, K, N, N, TT_FEATURE_DIM))
        features[..., 0] = crossing
        features[..., 1] = crossing_t
        mask = mask & ((crossing + crossing_t) > 0)
        return Tensor(features), mask, distance

    bi, ki, ai, bj = _grid((B, K, N, N))
    velocity, acceleration = _kinematics(trajs, batch.sample_rate)
    p_self = trajs[bi, ki, ai, time_index]
    p_other = trajs[bi, ki, bj, time_index]
    gap = p_other - p_self
    dist = norm(gap)
    bearing = atan2(gap[..., 1], gap[..., 0])

    heading = batch.headings[:, None, :, None]
    upper = np.triu(np.ones((N, N)), k=1)
    lower = np.tril(np.ones((N, N)), k=-1)
    nonzero = (distance >= ZERO_DISTANCE_M).astype(np.float64)
    angle = (
        wrap_angle(bearing - heading) * upper
        - wrap_angle(bearing.swapaxes(-1, -2) - heading) * lower
    ) * nonzero

    rotations = batch.rotations[:, None, :, None]
    parts = [
        rotate_rows(velocity[bi, ki, ai, time_index], rotations),
        rotate_rows(velocity[bi, ki, bj, time_index], rotations),
        rotate_rows(acceleration[bi, ki, ai, time_index], rotations),
        rotate_rows(acceleration[bi, ki, bj, time_index], rotations),
        dist.reshape(dist.shape + (1,)),
        angle.reshape(angle.shape + (1,)),
    ]
    return concat(parts, axis=-1), mask, distance


def tl_topology(trajs: Tensor, batch: SceneBatch, config: RefinerConfig):
    """Trajectory-lane features, mask and distances"""
    y = trajs.data
    B, K, N = y.shape[:3]
    M = batch.num_lanes
    time_index = np.zeros((B, K, N, M), dtype=np.int64)
    vertex_index = np.zeros((B, K, N, M), dtype=np.int64)
    distance = np.zeros((B, K, N, M))
    for b in range(B):
        time_index[b], vertex_index[b], distance[b] = lane_soft_intersections(
            y[b], batch.lane_vertices[b], batch.vertex_mask[b]
        )
    valid = batch.agent_mask[:, None, :, None] & batch.lane_mask[:, None, None, :]
    mask = neighbor_mask(distance, config.tau_l, exclude_self=False) & valid

    if config.topology_mode != "soft_braid":
        return Tensor(np.zeros((B, K, N, M, TL_FEATURE_DIM))), mask, distance

    bi, ki, ai, mi = _grid((B, K, N, M))
    velocity, acceleration = _kinematics(trajs, batch.sample_rate)
    lane_point = batch.lane_vertices[bi, mi, vertex_index]
    gap = lane_point - trajs[bi, ki, ai, time_index]
    dist = norm(gap)
    nonzero = (distance >= ZERO_DISTANCE_M).astype(np.float64)
    angle = wrap_angle(atan2(gap[..., 1], gap[..., 0]) - batch.headings[:, None, :, None]) * nonzero

    rotations = batch.rotations[:, None, :, None]
    parts = [
        rotate_rows(velocity[bi, ki, ai, time_index], rotations),
        rotate_rows(acceleration[bi, ki, ai, time_index], rotations),
        dist.reshape(dist.shape + (1,)),
        angle.reshape(angle.shape + (1,)),
    ]
    return concat(parts, axis=-1), mask, distance


def scene_topology(trajs: Union[Tensor, np.ndarray], batch: SceneBatch, config: RefinerConfig) -> SceneTopology:
    """All topology inputs of one refinement iteration"""
    trajs = as_tensor(trajs)
    tt_features, tt_mask, tt_distance = tt_topology(trajs, batch, config)
    tl_features, tl_mask, tl_distance = tl_topology(trajs, batch, config)
    return SceneTopology(
        tt_features=tt_features,
        tt_mask=tt_mask,
        tt_distance=tt_distance,
        tl_features=tl_features,
        tl_mask=tl_mask,
        tl_distance=tl_distance,
    )
