"""Per-action and per-waypoint rewards."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .planner import PlanOutcome


@dataclass(frozen=True)
class RewardConfig:
    success_bonus: float = 10.0
    geodesic_delta_coeff: float = 0.25
    time_penalty: float = -0.01
    proportional: bool = False  # scale by cells gained instead of a flat bonus per improving action


def step_reward(prev_dist: float, new_dist: float, success: bool, cell_size: float = 0.5,
                config: RewardConfig = RewardConfig()) -> float:
    """Reward for one primitive action given geodesic distances (metres) before and after."""
    cells = (prev_dist - new_dist) / cell_size
    if config.proportional:
        progress = config.geodesic_delta_coeff * cells
    else:
        progress = config.geodesic_delta_coeff * round(cells)
    r = progress + config.time_penalty
    if success:
        r += config.success_bonus
    return r


def waypoint_reward(outcome: PlanOutcome) -> float:
    return math.fsum(outcome.step_rewards)
