"""Interaction-blind coarse predictor

Mode 0 extrapolates each agent's last history displacement at constant
velocity. Further modes rotate and scale that velocity by fixed presets and
add seeded Gaussian noise scaled by min(1, speed / 1 m/s), so a static agent
stays put in every mode.
"""

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np

from src.app.data.scenario import ModeSet, Scenario
from src.core.errors import InvalidInputError

# (heading change in degrees, speed factor)
MODE_PRESETS: Tuple[Tuple[float, float], ...] = (
    (0.0, 1.0),
    (10.0, 1.0),
    (-10.0, 1.0),
    (0.0, 1.2),
    (0.0, 0.8),
    (10.0, 0.8),
    (-10.0, 0.8),
    (10.0, 1.2),
    (-10.0, 1.2),
)
NOISE_STD_M = 0.2
NOISE_FULL_SPEED = 1.0


def mode_preset(k: int) -> Tuple[float, float]:
    """Presets repeat past the table with the heading change widened each round"""
    angle, factor = MODE_PRESETS[k % len(MODE_PRESETS)]
    return angle * (1 + k // len(MODE_PRESETS)), factor


def scenario_rng(scenario_id: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(scenario_id.encode("utf-8"))])


def coarse_predict(scenario: Scenario, k: int, seed: int = 0, noise_std: float = NOISE_STD_M) -> ModeSet:
    """K constant-velocity hypotheses for every agent, shape (K, N, T+, 2)"""
    if k < 1:
        raise InvalidInputError(f"K must be at least 1, got {k}")
    rng = scenario_rng(scenario.scenario_id, seed)
    histories = scenario.histories()
    last = histories[:, -1]
    velocity = (histories[:, -1] - histories[:, -2]) * scenario.sample_rate
    speed = np.hypot(velocity[:, 0], velocity[:, 1])
    times = (np.arange(scenario.future_len) + 1) / scenario.sample_rate
    noise_scale = noise_std * np.minimum(1.0, speed / NOISE_FULL_SPEED)

    modes = np.zeros((k, scenario.num_agents, scenario.future_len, 2))
    for mode in range(k):
        angle_deg, factor = mode_preset(mode)
        c, s = math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))
        v = factor * np.stack([velocity[:, 0] * c - velocity[:, 1] * s, velocity[:, 0] * s + velocity[:, 1] * c], axis=-1)
        modes[mode] = last[:, None, :] + v[:, None, :] * times[None, :, None]
        if mode > 0 and noise_std > 0:
            modes[mode] += rng.normal(size=modes[mode].shape) * noise_scale[:, None, None]
    return ModeSet(scenario_id=scenario.scenario_id, modes=modes)


def coarse_predict_all(
    scenarios: Sequence[Scenario],
    k: int,
    seed: int = 0,
    noise_std: float = NOISE_STD_M,
    threads: int = 1,
) -> List[ModeSet]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: coarse_predict(s, k, seed, noise_std), scenarios))
    return [coarse_predict(s, k, seed, noise_std) for s in scenarios]
