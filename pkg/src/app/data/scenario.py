"""Scenario and mode-set records"""

from typing import Annotated, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator

from src.core.errors import InvalidInputError


def _as_points(value) -> np.ndarray:
    points = np.asarray(value, dtype=np.float64)
    if points.size == 0:
        points = points.reshape(0, 2)
    if points.ndim != 2 or points.shape[-1] != 2:
        raise ValueError(f"expected a list of [x, y] points, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("coordinates must be finite")
    return points


Points = Annotated[
    np.ndarray,
    BeforeValidator(_as_points),
    PlainSerializer(lambda a: a.tolist(), return_type=list),
]

LaneTag = Literal["through", "turn", "merge", "crossing"]


class Agent(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    id: str
    history: Points = Field(description="T- x 2, meters")
    future: Points = Field(description="T+ x 2 ground truth, meters")


class Lane(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    id: str
    centerline: Points = Field(description="P x 2 polyline vertices, meters")
    tag: LaneTag = "through"

    @model_validator(mode="after")
    def check_vertices(self) -> "Lane":
        if self.centerline.shape[0] < 1:
            raise ValueError("lane centerline needs at least one vertex")
        return self


class Scenario(BaseModel):
    """One traffic scene: agent tracks, lanes and sampling metadata"""

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    scenario_id: str
    archetype: str = "unknown"
    sample_rate: float = Field(gt=0, description="Hz")
    history_len: int = Field(ge=2)
    future_len: int = Field(ge=3)
    agents: List[Agent] = Field(min_length=1)
    lanes: List[Lane] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_horizons(self) -> "Scenario":
        for agent in self.agents:
            if agent.history.shape[0] != self.history_len:
                raise ValueError(
                    f"agent {agent.id}: history has {agent.history.shape[0]} points, expected {self.history_len}"
                )
            if agent.future.shape[0] != self.future_len:
                raise ValueError(
                    f"agent {agent.id}: future has {agent.future.shape[0]} points, expected {self.future_len}"
                )
        return self

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    def histories(self) -> np.ndarray:
        """(N, T-, 2)"""
        return np.stack([a.history for a in self.agents])

    def futures(self) -> np.ndarray:
        """(N, T+, 2)"""
        return np.stack([a.future for a in self.agents])


class ModeSet(BaseModel):
    """K x N x T+ x 2 predicted futures for one scenario"""

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    scenario_id: str
    modes: Annotated[
        np.ndarray,
        BeforeValidator(lambda v: np.asarray(v, dtype=np.float64)),
        PlainSerializer(lambda a: a.tolist(), return_type=list),
    ]

    @model_validator(mode="after")
    def check_modes(self) -> "ModeSet":
        if self.modes.ndim != 4 or self.modes.shape[-1] != 2 or min(self.modes.shape[:3]) < 1:
            raise ValueError(f"modes must have shape (K>=1, N>=1, T+>=1, 2), got {self.modes.shape}")
        if not np.all(np.isfinite(self.modes)):
            raise ValueError("modes must be finite")
        return self

    @property
    def num_modes(self) -> int:
        return self.modes.shape[0]

    def check_against(self, scenario: Scenario) -> None:
        """Raise when the mode set does not fit the scenario's agents and horizon"""
        expected = (scenario.num_agents, scenario.future_len, 2)
        if self.scenario_id != scenario.scenario_id:
            raise InvalidInputError(
                f"mode set for {self.scenario_id!r} paired with scenario {scenario.scenario_id!r}"
            )
        if self.modes.shape[1:] != expected:
            raise InvalidInputError(
                f"{self.scenario_id}: modes shape {self.modes.shape} does not match (K, {expected[0]}, {expected[1]}, 2)"
            )


def pair_modes(scenarios: List[Scenario], modesets: List[ModeSet]) -> List[ModeSet]:
    """Order mode sets like the scenarios they belong to"""
    by_id = {m.scenario_id: m for m in modesets}
    paired: List[ModeSet] = []
    for scenario in scenarios:
        found: Optional[ModeSet] = by_id.get(scenario.scenario_id)
        if found is None:
            raise InvalidInputError(f"no mode set for scenario {scenario.scenario_id!r}")
        found.check_against(scenario)
        paired.append(found)
    return paired
