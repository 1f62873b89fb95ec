"""Step rewards and episode termination.

Terms: newly-covered-area reward normalized by the per-step maximum, global
and incremental total-variation shaping on the coverage map, a collision
penalty, and a constant time penalty. Total variation is computed in cell
units; callers scale by the map resolution so the TV rewards, which divide by
metric quantities, stay dimensionless.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .worldmodel import RESOLUTION


@dataclass(frozen=True)
class RewardConfig:
    lambda_area: float = 1.0
    lambda_tv_global: float = 0.0
    lambda_tv_incremental: float = 0.2
    r_collision: float = -10.0
    r_constant: float = -0.1
    truncation_steps: int = 1000
    goal_coverage: float = 0.90


@dataclass(frozen=True)
class RewardBreakdown:
    r_area: float
    r_tv_g: float
    r_tv_i: float
    r_coll: float
    r_const: float

    @property
    def total(self) -> float:
        return self.r_area + self.r_tv_g + self.r_tv_i + self.r_coll + self.r_const


class Termination(enum.Enum):
    CONTINUE = "continue"
    GOAL_REACHED = "goal_reached"
    TRUNCATED = "truncated"


def area_reward(a_new: float, agent_radius: float, v_max: float, dt: float, lambda_area: float = 1.0) -> float:
    """Newly covered area scaled so a full-speed straight sweep scores lambda_area."""
    if a_new < 0:
        raise ValueError("newly covered area cannot be negative")
    return lambda_area * a_new / (2.0 * agent_radius * v_max * dt)


def total_variation(x: np.ndarray) -> float:
    """Discrete isotropic total variation with forward differences.

    Only cells with both forward neighbors in range contribute, so constant
    fields are exactly zero. For a binary grid the result is in cell units.
    """
    g = np.asarray(x, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("total variation expects a 2D grid")
    if g.shape[0] < 2 or g.shape[1] < 2:
        return 0.0
    dv = g[1:, :-1] - g[:-1, :-1]
    dh = g[:-1, 1:] - g[:-1, :-1]
    return float(np.sqrt(dv * dv + dh * dh).sum())


def tv_global(tv_m: float, covered_area: float, lambda_g: float, resolution: float = RESOLUTION) -> float:
    """Global shaping: TV (meters) over sqrt(covered area); 0 below one covered cell."""
    if covered_area < resolution * resolution - 1e-12:
        return 0.0
    return -lambda_g * tv_m / math.sqrt(covered_area)


def tv_incremental(tv_m: float, tv_prev_m: float, v_max: float, dt: float, lambda_i: float) -> float:
    """Incremental shaping: TV change (meters) over the per-step maximum increase.

    The boundary of the covered region grows by at most twice the traveled
    distance per step, hence the 2*v_max*dt normalization. Positive when the
    TV decreased.
    """
    return -lambda_i * (tv_m - tv_prev_m) / (2.0 * v_max * dt)


def step_reward(
    a_new: float,
    tv_m: float,
    tv_prev_m: float,
    covered_area: float,
    collided: bool,
    cfg: RewardConfig,
    *,
    agent_radius: float,
    v_max: float,
    dt: float,
    resolution: float = RESOLUTION,
) -> RewardBreakdown:
    """Assemble all per-step reward terms; the collision penalty lands at most once per step."""
    return RewardBreakdown(
        r_area=area_reward(a_new, agent_radius, v_max, dt, cfg.lambda_area),
        r_tv_g=tv_global(tv_m, covered_area, cfg.lambda_tv_global, resolution),
        r_tv_i=tv_incremental(tv_m, tv_prev_m, v_max, dt, cfg.lambda_tv_incremental),
        r_coll=cfg.r_collision if collided else 0.0,
        r_const=cfg.r_constant,
    )


def check_termination(coverage_fraction: float, cfg: RewardConfig, steps_since_new: int) -> Termination:
    if coverage_fraction >= cfg.goal_coverage - 1e-12:
        return Termination.GOAL_REACHED
    if steps_since_new >= cfg.truncation_steps:
        return Termination.TRUNCATED
    return Termination.CONTINUE
