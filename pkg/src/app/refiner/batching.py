"""Padded scenario batches for the refiner

Scenarios in a batch may differ in agent and lane counts. Agents are padded to
the largest N and lanes to the largest M (vertices to the largest V); padded
entries carry False in the masks and are excluded from every neighbor set,
loss and metric average.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.app.data.scenario import ModeSet, Scenario
from src.app.scene.geometry import frame_from_history, rotate_to_local, rotation_matrix
from src.core.errors import InvalidInputError


def resample_polyline(vertices: np.ndarray, count: int) -> np.ndarray:
    """``count`` points evenly spaced by arc length, endpoints included"""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape[0] == 1:
        return np.repeat(vertices, count, axis=0)
    seg = np.hypot(*np.diff(vertices, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] <= 0.0:
        return np.repeat(vertices[:1], count, axis=0)
    targets = np.linspace(0.0, arc[-1], count)
    return np.stack(
        [np.interp(targets, arc, vertices[:, 0]), np.interp(targets, arc, vertices[:, 1])],
        axis=-1,
    )


@dataclass
class SceneBatch:
    """Arrays for B scenarios, agents padded to N, lanes to M x V"""

    scenario_ids: List[str]
    sample_rate: float
    modes: np.ndarray  # (B, K, N, T, 2) coarse Y0
    future: Optional[np.ndarray]  # (B, N, T, 2) ground truth
    agent_mask: np.ndarray  # (B, N)
    origins: np.ndarray  # (B, N, 2)
    headings: np.ndarray  # (B, N)
    lane_vertices: np.ndarray  # (B, M, V, 2)
    vertex_mask: np.ndarray  # (B, M, V)
    lane_mask: np.ndarray  # (B, M)
    lane_points_local: np.ndarray  # (B, N, M, P, 2)

    @property
    def size(self) -> int:
        return self.modes.shape[0]

    @property
    def num_modes(self) -> int:
        return self.modes.shape[1]

    @property
    def num_agents(self) -> int:
        return self.modes.shape[2]

    @property
    def future_len(self) -> int:
        return self.modes.shape[3]

    @property
    def num_lanes(self) -> int:
        return self.lane_vertices.shape[1]

    @property
    def rotations(self) -> np.ndarray:
        """Global-to-local row-vector rotations, (B, N, 2, 2)"""
        return rotation_matrix(self.headings)

    def centered_origins(self) -> np.ndarray:
        """Origins minus the mean origin of each scenario's real agents"""
        weights = self.agent_mask.astype(np.float64)
        count = np.maximum(weights.sum(axis=1, keepdims=True), 1.0)
        mean = (self.origins * weights[..., None]).sum(axis=1, keepdims=True) / count[..., None]
        return (self.origins - mean) * weights[..., None]

    def local_modes(self) -> np.ndarray:
        """Coarse modes in each agent's own frame, (B, K, N, T, 2)"""
        offset = self.modes - self.origins[:, None, :, None, :]
        return rotate_to_local(offset, self.headings[:, None, :, None])

    def unpad_modes(self, modes: np.ndarray) -> List[np.ndarray]:
        """Split (B, K, N, T, 2) back into per-scenario (K, N_b, T, 2) arrays"""
        counts = self.agent_mask.sum(axis=1)
        return [modes[b, :, : int(counts[b])].copy() for b in range(self.size)]

    @classmethod
    def from_scenarios(
        cls,
        scenarios: Sequence[Scenario],
        modesets: Sequence[ModeSet],
        lane_points: int = 10,
        with_future: bool = True,
    ) -> "SceneBatch":
        if not scenarios:
            raise InvalidInputError("cannot batch zero scenarios")
        if len(scenarios) != len(modesets):
            raise InvalidInputError(
                f"{len(scenarios)} scenarios but {len(modesets)} mode sets"
            )
        sample_rates = {s.sample_rate for s in scenarios}
        future_lens = {s.future_len for s in scenarios}
        mode_counts = {m.num_modes for m in modesets}
        if len(sample_rates) > 1 or len(future_lens) > 1 or len(mode_counts) > 1:
            raise InvalidInputError(
                "scenarios in one batch must share sample rate, future length and mode count"
            )
        for scenario, modeset in zip(scenarios, modesets):
            modeset.check_against(scenario)

        size = len(scenarios)
        k = mode_counts.pop()
        t = future_lens.pop()
        n = max(s.num_agents for s in scenarios)
        m = max(1, max(len(s.lanes) for s in scenarios))
        v = max([1] + [lane.centerline.shape[0] for s in scenarios for lane in s.lanes])

        modes = np.zeros((size, k, n, t, 2))
        future = np.zeros((size, n, t, 2)) if with_future else None
        agent_mask = np.zeros((size, n), dtype=bool)
        origins = np.zeros((size, n, 2))
        headings = np.zeros((size, n))
        lane_vertices = np.zeros((size, m, v, 2))
        vertex_mask = np.zeros((size, m, v), dtype=bool)
        lane_mask = np.zeros((size, m), dtype=bool)
        lane_points_local = np.zeros((size, n, m, lane_points, 2))

        for b, (scenario, modeset) in enumerate(zip(scenarios, modesets)):
            count = scenario.num_agents
            modes[b, :, :count] = modeset.modes
            if future is not None:
                future[b, :count] = scenario.futures()
            agent_mask[b, :count] = True
            for i, agent in enumerate(scenario.agents):
                frame = frame_from_history(agent.history)
                origins[b, i] = frame.origin
                headings[b, i] = frame.heading
            for j, lane in enumerate(scenario.lanes):
                vertices = lane.centerline
                lane_vertices[b, j, : vertices.shape[0]] = vertices
                vertex_mask[b, j, : vertices.shape[0]] = True
                lane_mask[b, j] = True
                resampled = resample_polyline(vertices, lane_points)
                offset = resampled[None, :, :] - origins[b, :count, None, :]
                lane_points_local[b, :count, j] = rotate_to_local(offset, headings[b, :count, None])

        return cls(
            scenario_ids=[s.scenario_id for s in scenarios],
            sample_rate=float(sample_rates.pop()),
            modes=modes,
            future=future,
            agent_mask=agent_mask,
            origins=origins,
            headings=headings,
            lane_vertices=lane_vertices,
            vertex_mask=vertex_mask,
            lane_mask=lane_mask,
            lane_points_local=lane_points_local,
        )


def iter_batches(
    scenarios: Sequence[Scenario],
    modesets: Sequence[ModeSet],
    batch_size: int,
    lane_points: int,
    order: Optional[np.ndarray] = None,
):
    """Yield SceneBatch objects in ``order`` (default: file order)"""
    indices = np.arange(len(scenarios)) if order is None else np.asarray(order)
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        yield SceneBatch.from_scenarios(
            [scenarios[i] for i in chunk],
            [modesets[i] for i in chunk],
            lane_points=lane_points,
        )
