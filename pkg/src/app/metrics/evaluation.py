"""Joint multi-world displacement metrics

A world is one mode index shared by all agents of a scenario. Each metric
picks the world with the lowest mean error over agents; FDE and ADE pick their
worlds independently, and the miss rates use the FDE world. Ties go to the
smallest world index. All agents are scored.
"""

from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from src.app.data.scenario import ModeSet, Scenario
from src.core.errors import ShapeError

MISS_DISTANCE_M = 2.0
SLOW_SPEED = 1.4
FAST_SPEED = 11.0


def _check(modes: np.ndarray, truth: np.ndarray):
    modes = np.asarray(modes, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if modes.ndim != 4 or modes.shape[1:] != truth.shape:
        raise ShapeError(f"modes {modes.shape} do not match ground truth {truth.shape}")
    return modes, truth


def endpoint_errors(modes: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """(K, N) final displacement per world and agent"""
    modes, truth = _check(modes, truth)
    gap = modes[:, :, -1] - truth[None, :, -1]
    return np.hypot(gap[..., 0], gap[..., 1])


def displacement_errors(modes: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """(K, N) mean displacement per world and agent"""
    modes, truth = _check(modes, truth)
    gap = modes - truth[None]
    return np.hypot(gap[..., 0], gap[..., 1]).mean(axis=-1)


def fde_world(modes: np.ndarray, truth: np.ndarray) -> int:
    return int(np.argmin(endpoint_errors(modes, truth).mean(axis=1)))


def avg_min_fde(modes: np.ndarray, truth: np.ndarray) -> float:
    per_world = endpoint_errors(modes, truth).mean(axis=1)
    return float(per_world[np.argmin(per_world)])


def avg_min_ade(modes: np.ndarray, truth: np.ndarray) -> float:
    per_world = displacement_errors(modes, truth).mean(axis=1)
    return float(per_world[np.argmin(per_world)])


def actor_mr(modes: np.ndarray, truth: np.ndarray, threshold: float = MISS_DISTANCE_M) -> float:
    """Share of agents whose endpoint error exceeds ``threshold`` in the FDE world"""
    errors = endpoint_errors(modes, truth)
    return float(np.mean(errors[np.argmin(errors.mean(axis=1))] > threshold))


def miss_threshold(speed):
    """Velocity-dependent miss distance: 1 m when slow, 2 m when fast, linear between"""
    speed = np.asarray(speed, dtype=np.float64)
    ramp = 1.0 + (speed - SLOW_SPEED) / (FAST_SPEED - SLOW_SPEED)
    value = np.where(speed <= SLOW_SPEED, 1.0, np.where(speed <= FAST_SPEED, ramp, 2.0))
    return float(value) if value.ndim == 0 else value


def final_speed(truth: np.ndarray, sample_rate: float) -> np.ndarray:
    """(N,) ground-truth speed from the last backward difference"""
    step = truth[:, -1] - truth[:, -2]
    return np.hypot(step[:, 0], step[:, 1]) * sample_rate


def min_joint_mr(modes: np.ndarray, truth: np.ndarray, sample_rate: float) -> float:
    errors = endpoint_errors(modes, truth)
    thresholds = miss_threshold(final_speed(np.asarray(truth, dtype=np.float64), sample_rate))
    return float(np.mean(errors[np.argmin(errors.mean(axis=1))] > thresholds))


# ============================================================================
# Reports
# ============================================================================

class ScenarioMetrics(BaseModel):
    scenario_id: str
    archetype: str = "unknown"
    avg_min_fde: float = Field(ge=0)
    avg_min_ade: float = Field(ge=0)
    actor_mr: float = Field(ge=0, le=1)
    min_joint_mr: float = Field(ge=0, le=1)
    fde_world: int = Field(ge=0)


class MetricReport(BaseModel):
    """Scenario-averaged metrics plus the per-scenario breakdown

    ``min_joint_fde`` and ``min_joint_ade`` are the same joint quantities as
    ``avg_min_fde`` / ``avg_min_ade`` with every agent scored.
    """

    scenario_count: int = Field(ge=0)
    avg_min_fde: float = Field(ge=0)
    avg_min_ade: float = Field(ge=0)
    actor_mr: float = Field(ge=0, le=1)
    min_joint_fde: float = Field(ge=0)
    min_joint_ade: float = Field(ge=0)
    min_joint_mr: float = Field(ge=0, le=1)
    scenarios: List[ScenarioMetrics] = Field(default_factory=list)

    def summary(self) -> dict:
        """Aggregate values only, for logs and training records"""
        return self.model_dump(exclude={"scenarios"})


def score_scenario(scenario: Scenario, modes: np.ndarray) -> ScenarioMetrics:
    truth = scenario.futures()
    return ScenarioMetrics(
        scenario_id=scenario.scenario_id,
        archetype=scenario.archetype,
        avg_min_fde=avg_min_fde(modes, truth),
        avg_min_ade=avg_min_ade(modes, truth),
        actor_mr=actor_mr(modes, truth),
        min_joint_mr=min_joint_mr(modes, truth, scenario.sample_rate),
        fde_world=fde_world(modes, truth),
    )


def evaluate(
    scenarios: Sequence[Scenario],
    modesets: Sequence[ModeSet],
    include_scenarios: bool = True,
) -> MetricReport:
    """Score paired scenarios and mode sets; aggregation follows input order"""
    if len(scenarios) != len(modesets):
        raise ShapeError(f"{len(scenarios)} scenarios but {len(modesets)} mode sets")
    rows: List[ScenarioMetrics] = []
    for scenario, modeset in zip(scenarios, modesets):
        modeset.check_against(scenario)
        rows.append(score_scenario(scenario, modeset.modes))
    return aggregate(rows, include_scenarios=include_scenarios)


def aggregate(rows: Sequence[ScenarioMetrics], include_scenarios: bool = True) -> MetricReport:
    def mean(field: str) -> float:
        return float(np.mean([getattr(r, field) for r in rows])) if rows else 0.0

    return MetricReport(
        scenario_count=len(rows),
        avg_min_fde=mean("avg_min_fde"),
        avg_min_ade=mean("avg_min_ade"),
        actor_mr=mean("actor_mr"),
        min_joint_fde=mean("avg_min_fde"),
        min_joint_ade=mean("avg_min_ade"),
        min_joint_mr=mean("min_joint_mr"),
        scenarios=list(rows) if include_scenarios else [],
    )


def to_csv_row(value: str, report: MetricReport, digits: Optional[int] = 6) -> List[str]:
    """(value, avgMinFDE, avgMinADE, actorMR, minJointMR) as strings"""
    numbers = [report.avg_min_fde, report.avg_min_ade, report.actor_mr, report.min_joint_mr]
    return [value] + [f"{x:.{digits}f}" if digits is not None else repr(x) for x in numbers]
