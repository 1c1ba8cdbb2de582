"""Synthetic interaction scenarios

Every agent moves along a dense path (built from straight and constant-
curvature pieces, parameterized by arc length) with an analytic speed profile,
so ground truth is exact and accelerations stay below 5 m/s^2. Histories are
always driven at constant speed; speed changes start at or after the present.

Archetypes:
    crossing     two straight paths meet at a conflict point; the second agent
                 reaches it 0.8-1.5 s after the first, on a sample, so the
                 braid crossing is guaranteed
    yielding     like crossing, but the second agent brakes hard and stays at
                 least 4 m short of the conflict point
    merging      a ramp path curves onto the main road behind the main-road agent
    lane_follow  agents on concentric curved lanes
    platoon      car-following on one path with delayed speed profiles

Extra agents beyond an archetype's core pair follow the later agent on its
path.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.app.data.scenario import Agent, Lane, Scenario
from src.config.run_config import DataConfig
from src.core.errors import InvalidInputError
from src.core.logging import get_logger

logger = get_logger(__name__)

PATH_STEP_M = 0.05
LANE_SPACING_M = 2.0
LANE_MARGIN_M = 15.0
MAX_ACCEL = 5.0
PAIR_ARCHETYPES = ("crossing", "yielding", "merging")


# ============================================================================
# Paths and speed profiles
# ============================================================================

@dataclass
class PathCurve:
    """Dense polyline with exact arc-length parameterization"""

    points: np.ndarray
    arc: np.ndarray

    @classmethod
    def from_segments(
        cls,
        start: Tuple[float, float],
        heading: float,
        segments: Sequence[Tuple[float, float]],
        step: float = PATH_STEP_M,
    ) -> "PathCurve":
        """Integrate (length, curvature) pieces from a start pose"""
        curvature = np.concatenate(
            [np.full(max(1, int(round(length / step))), kappa) for length, kappa in segments]
        )
        turn = np.cumsum(curvature * step)
        mid_heading = heading + turn - 0.5 * curvature * step
        steps = np.stack([np.cos(mid_heading), np.sin(mid_heading)], axis=-1) * step
        origin = np.asarray(start, dtype=np.float64)
        points = np.concatenate([origin[None], origin + np.cumsum(steps, axis=0)])
        arc = np.arange(points.shape[0]) * step
        return cls(points=points, arc=arc)

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if np.any(s < 0) or np.any(s > self.length):
            raise InvalidInputError("position outside the generated path")
        return np.stack(
            [np.interp(s, self.arc, self.points[:, 0]), np.interp(s, self.arc, self.points[:, 1])],
            axis=-1,
        )

    def shifted(self, offset) -> "PathCurve":
        return PathCurve(points=self.points + np.asarray(offset, dtype=np.float64), arc=self.arc)

    def lane(self, s_low: float, s_high: float, lateral: float) -> np.ndarray:
        """Centerline vertices every 2 m over [s_low, s_high], shifted sideways"""
        s_low = max(0.0, s_low)
        s_high = min(self.length, s_high)
        count = max(2, int(math.ceil((s_high - s_low) / LANE_SPACING_M)) + 1)
        s = np.linspace(s_low, s_high, count)
        base = self.at(s)
        tangent = np.gradient(base, axis=0)
        tangent /= np.maximum(np.hypot(tangent[:, 0], tangent[:, 1]), 1e-12)[:, None]
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1)
        return base + lateral * normal


@dataclass(frozen=True)
class SpeedProfile:
    """Constant speed, then a constant-rate change to ``v_target`` starting at ``change_at`` >= 0"""

    v0: float
    change_at: float = math.inf
    accel: float = 0.0
    v_target: float = 0.0

    @property
    def ramp_time(self) -> float:
        if self.accel == 0.0 or not math.isfinite(self.change_at):
            return 0.0
        return (self.v_target - self.v0) / self.accel

    def distance(self, t: np.ndarray) -> np.ndarray:
        """Arc length travelled since t = 0 (negative in the past)"""
        t = np.asarray(t, dtype=np.float64)
        if not math.isfinite(self.change_at) or self.accel == 0.0:
            return self.v0 * t
        tc, tr = self.change_at, self.ramp_time
        ramp = self.v0 * t + 0.5 * self.accel * (t - tc) ** 2
        ramp_end = self.v0 * (tc + tr) + 0.5 * self.accel * tr ** 2
        after = ramp_end + self.v_target * (t - tc - tr)
        return np.where(t <= tc, self.v0 * t, np.where(t <= tc + tr, ramp, after))

    def speed(self, t: float) -> float:
        if not math.isfinite(self.change_at) or self.accel == 0.0 or t <= self.change_at:
            return self.v0
        if t <= self.change_at + self.ramp_time:
            return self.v0 + self.accel * (t - self.change_at)
        return self.v_target


@dataclass
class Mover:
    """Agent on a path: arc position ``s_now`` at t = 0, shifted by ``delay`` in time"""

    path_key: str
    s_now: float
    profile: SpeedProfile
    delay: float = 0.0

    def positions(self, path: PathCurve, times: np.ndarray) -> np.ndarray:
        travelled = self.profile.distance(times - self.delay) - self.profile.distance(-self.delay)
        return path.at(self.s_now + travelled)


class _Clock:
    def __init__(self, dims: DataConfig):
        dt = 1.0 / dims.sample_rate
        self.dt = dt
        self.history = (np.arange(dims.history_len) - (dims.history_len - 1)) * dt
        self.future = (np.arange(dims.future_len) + 1) * dt

    @property
    def horizon(self) -> float:
        return float(self.future[-1])

    @property
    def all(self) -> np.ndarray:
        return np.concatenate([self.history, self.future])


# ============================================================================
# Archetypes
# ============================================================================

PATH_HALF_LENGTH_M = 250.0


def _straight_through(direction: float) -> PathCurve:
    """Straight path whose arc position PATH_HALF_LENGTH_M is the origin"""
    u = np.array([math.cos(direction), math.sin(direction)])
    start = tuple(-PATH_HALF_LENGTH_M * u)
    return PathCurve.from_segments(start, direction, [(2 * PATH_HALF_LENGTH_M, 0.0)])


def _followers(rng, lead: Mover, count: int) -> List[Mover]:
    movers = []
    gap = 0.0
    delay = 0.0
    for _ in range(count):
        gap += rng.uniform(7.0, 11.0)
        delay += rng.uniform(0.3, 0.8)
        # same profile shifted in time, started further back on the path
        s_now = lead.s_now - gap - (lead.profile.distance(0.0 - lead.delay) - lead.profile.distance(-delay - lead.delay))
        movers.append(Mover(lead.path_key, float(s_now), lead.profile, delay=lead.delay + delay))
    return movers


def _crossing_pair(rng, clock: _Clock, yielding: bool):
    crossing_angle = rng.uniform(math.radians(60), math.radians(120)) * rng.choice([-1.0, 1.0])
    paths = {"main": _straight_through(0.0), "cross": _straight_through(crossing_angle)}
    conflict_s = PATH_HALF_LENGTH_M
    steps = len(clock.future)

    first_index = int(np.clip(round(rng.uniform(0.2, 0.35) * steps), 1, max(1, steps - 2)))
    v_a = rng.uniform(5.0, 10.0)
    first = Mover("main", conflict_s - v_a * clock.future[first_index], SpeedProfile(v_a))

    if not yielding:
        lag = int(round(rng.uniform(0.8, 1.5) / clock.dt))
        second_index = int(np.clip(first_index + max(lag, 1), first_index + 1, steps - 1))
        v_b = rng.uniform(5.0, 10.0)
        second = Mover("cross", conflict_s - v_b * clock.future[second_index], SpeedProfile(v_b))
        tags = {"main": "through", "cross": "crossing"}
        return paths, [first, second], tags

    v0 = rng.uniform(6.0, 10.0)
    profile = SpeedProfile(
        v0=v0,
        change_at=rng.uniform(0.0, 0.3),
        accel=-rng.uniform(3.0, 4.5),
        v_target=v0 * rng.uniform(0.2, 0.5),
    )
    travelled = float(profile.distance(clock.horizon))
    second = Mover("cross", conflict_s - travelled - rng.uniform(4.0, 8.0), profile)
    tags = {"main": "through", "cross": "crossing"}
    return paths, [first, second], tags


def _merging_pair(rng, clock: _Clock):
    ramp_angle = rng.uniform(math.radians(15), math.radians(25))
    curve_length = rng.uniform(25.0, 40.0)
    ramp = PathCurve.from_segments(
        (0.0, 0.0), ramp_angle, [(200.0, 0.0), (curve_length, -ramp_angle / curve_length), (200.0, 0.0)]
    )
    merge_s = 200.0 + curve_length
    merge_point = ramp.at(merge_s)
    ramp = ramp.shifted(-merge_point)
    main = _straight_through(0.0)

    v_b = rng.uniform(7.0, 11.0)
    t_merge = rng.uniform(0.5, 2.0)
    second = Mover("ramp", merge_s - v_b * t_merge, SpeedProfile(v_b))
    v_a = rng.uniform(7.0, 11.0)
    lead_time = rng.uniform(1.0, 1.8)
    first = Mover("main", PATH_HALF_LENGTH_M - v_a * (t_merge - lead_time), SpeedProfile(v_a))
    return {"main": main, "ramp": ramp}, [first, second], {"main": "through", "ramp": "merge"}


def _lane_follow(rng, clock: _Clock, count: int):
    radius = rng.uniform(60.0, 150.0) + 3.5 * (count // 2)
    side = rng.choice([-1.0, 1.0])
    straight = 200.0
    offsets = [((i + 1) // 2) * 3.5 * (1.0 if i % 2 else -1.0) for i in range(count)]
    paths: Dict[str, PathCurve] = {}
    movers: List[Mover] = []
    tags: Dict[str, str] = {}
    for i, offset in enumerate(offsets):
        lane_radius = radius - side * offset
        start = (0.0, offset)
        key = f"lane{i}"
        paths[key] = PathCurve.from_segments(
            start, 0.0, [(straight, 0.0), (lane_radius * math.pi / 2, side / lane_radius), (200.0, 0.0)]
        )
        speed = rng.uniform(6.0, 11.0)
        s_now = straight - rng.uniform(0.2, 1.0) * speed * clock.horizon
        movers.append(Mover(key, s_now, SpeedProfile(speed)))
        tags[key] = "turn"
    return paths, movers, tags


def _platoon(rng, clock: _Clock, count: int):
    radius = rng.uniform(150.0, 400.0) * rng.choice([-1.0, 1.0])
    path = PathCurve.from_segments((0.0, 0.0), 0.0, [(200.0, 0.0), (300.0, 1.0 / radius)])
    v0 = rng.uniform(8.0, 12.0)
    profile = SpeedProfile(
        v0=v0,
        change_at=rng.uniform(0.5, 1.5),
        accel=-rng.uniform(1.0, 2.5),
        v_target=v0 * rng.uniform(0.5, 0.8),
    )
    leader = Mover("road", 250.0, profile)
    return {"road": path}, [leader] + _followers(rng, leader, count - 1), {"road": "through"}


# ============================================================================
# Assembly
# ============================================================================

def _rigid(rng):
    angle = rng.uniform(-math.pi, math.pi)
    c, s = math.cos(angle), math.sin(angle)
    rotation = np.array([[c, s], [-s, c]])
    shift = rng.uniform(-50.0, 50.0, size=2)
    return lambda points: points @ rotation + shift


def generate_scenario(archetype: str, rng: np.random.Generator, dims: DataConfig, scenario_id: str) -> Scenario:
    clock = _Clock(dims)
    count = int(rng.integers(dims.agents_min, dims.agents_max + 1))
    if archetype in PAIR_ARCHETYPES:
        count = max(count, 2)
        if archetype == "merging":
            paths, movers, tags = _merging_pair(rng, clock)
        else:
            paths, movers, tags = _crossing_pair(rng, clock, yielding=archetype == "yielding")
        movers = movers + _followers(rng, movers[1], count - 2)
    elif archetype == "lane_follow":
        paths, movers, tags = _lane_follow(rng, clock, count)
    elif archetype == "platoon":
        paths, movers, tags = _platoon(rng, clock, count)
    else:
        raise InvalidInputError(f"unknown archetype {archetype!r}")

    transform = _rigid(rng)
    times = clock.all
    agents: List[Agent] = []
    reach: Dict[str, List[float]] = {key: [] for key in paths}
    for i, mover in enumerate(movers):
        path = paths[mover.path_key]
        track = transform(mover.positions(path, times))
        agents.append(
            Agent(
                id=f"a{i}",
                history=track[: dims.history_len],
                future=track[dims.history_len:],
            )
        )
        s_values = mover.s_now + mover.profile.distance(times - mover.delay) - mover.profile.distance(-mover.delay)
        reach[mover.path_key].extend([float(s_values.min()), float(s_values.max())])

    lanes: List[Lane] = []
    for key, path in paths.items():
        if not reach[key]:
            continue
        vertices = path.lane(
            min(reach[key]) - LANE_MARGIN_M,
            max(reach[key]) + LANE_MARGIN_M,
            rng.uniform(-0.3, 0.3),
        )
        lanes.append(Lane(id=key, centerline=transform(vertices), tag=tags[key]))

    return Scenario(
        scenario_id=scenario_id,
        archetype=archetype,
        sample_rate=dims.sample_rate,
        history_len=dims.history_len,
        future_len=dims.future_len,
        agents=agents,
        lanes=lanes,
    )


def generate(
    dims: DataConfig,
    count: int,
    seed: int,
    archetypes: Optional[Sequence[str]] = None,
    threads: int = 1,
) -> List[Scenario]:
    """``count`` scenarios cycling through ``archetypes`` in order

    Each scenario draws from its own generator spawned from ``seed``, so the
    output does not depend on ``threads``.
    """
    if count < 1:
        raise InvalidInputError(f"count must be at least 1, got {count}")
    mix = list(archetypes or dims.archetypes)
    if not mix:
        raise InvalidInputError("archetype mix is empty")
    if dims.agents_max < 2 and any(a in PAIR_ARCHETYPES for a in mix):
        raise InvalidInputError("crossing, yielding and merging need agents_max >= 2")
    children = np.random.SeedSequence(seed).spawn(count)

    def build(index: int) -> Scenario:
        archetype = mix[index % len(mix)]
        rng = np.random.default_rng(children[index])
        return generate_scenario(archetype, rng, dims, f"{archetype}-{seed}-{index:05d}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scenarios = list(pool.map(build, range(count)))
    else:
        scenarios = [build(i) for i in range(count)]
    logger.info("Scenarios generated", extra={"count": count, "seed": seed, "archetypes": mix})
    return scenarios

