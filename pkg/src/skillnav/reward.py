"""Reward shaping: coverage gain, reachability-gated goal reward, time penalty.

The per-step reward is

    r_total = 2.0 * r_nav + 1.0 * r_exp + 0.2 * r_time

with r_exp the newly sensed free area in m^2, r_nav = exp(-d_goal) gated on
the goal actually being reachable within the current scan, and r_time = -1.

The coverage grid is privileged information: it exists only inside the
reward computation and is never exposed through any agent-facing interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Point2, Pose2, wrap_angle
from .raycast import (BEAM_COUNT, BEAM_MIN_DEG, BEAM_STEP_DEG,
                      trace_beams, swept_cells, world_beam_angles)
from .world import OccupancyGrid

WEIGHT_NAV = 2.0
WEIGHT_EXP = 1.0
WEIGHT_TIME = 0.2
TIME_PENALTY = -1.0

# Field of view of the range sensor, degrees to either side of the heading.
FOV_HALF_DEG = 175.0


@dataclass
class RewardBreakdown:
    r_exp: float
    r_nav: float
    r_time: float
    r_total: float


@dataclass
class CoverageGrid:
    """Cumulative sensed-area tracker over a world grid (reward-only)."""

    world: OccupancyGrid
    covered: np.ndarray = field(init=False)
    covered_area_m2: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        self.covered = np.zeros(self.world.occ.shape, dtype=bool)

    def reset(self) -> None:
        self.covered[:] = False
        self.covered_area_m2 = 0.0


def update_coverage(cov: CoverageGrid, pose: Pose2,
                    raw_ranges: np.ndarray) -> float:
    """Mark every free cell each beam sweeps; return the area gained in m^2."""
    grid = cov.world
    trace = trace_beams(grid, pose.x, pose.y, world_beam_angles(pose.theta))
    cutoffs = np.minimum(np.asarray(raw_ranges, dtype=float), trace.ranges)
    flat = swept_cells(trace, cutoffs, grid)
    idx = np.unique(flat)
    flat_cov = cov.covered.reshape(-1)
    newly = int((~flat_cov[idx]).sum())
    flat_cov[idx] = True
    delta = newly * grid.resolution ** 2
    cov.covered_area_m2 += delta
    return delta


def goal_bearing(pose: Pose2, goal: Point2) -> float:
    """Ego-frame bearing to the goal, radians in [-pi, pi)."""
    return wrap_angle(math.atan2(goal.y - pose.y, goal.x - pose.x) - pose.theta)


def goal_reachable(pose: Pose2, goal: Point2, raw_ranges: np.ndarray) -> bool:
    """True iff the goal is inside the sensor FOV and closer than the range
    reading of the beam pointing at it."""
    psi_deg = math.degrees(goal_bearing(pose, goal))
    if abs(psi_deg) > FOV_HALF_DEG:
        return False
    beam = int(round((psi_deg - BEAM_MIN_DEG) / BEAM_STEP_DEG))
    beam = min(max(beam, 0), BEAM_COUNT - 1)
    return pose.distance_to(goal) < float(raw_ranges[beam])


def nav_reward(pose: Pose2, goal: Point2, raw_ranges: np.ndarray) -> float:
    """exp(-d_goal) when the goal is reachable in the current scan, else 0."""
    if not goal_reachable(pose, goal, raw_ranges):
        return 0.0
    return math.exp(-pose.distance_to(goal))


def total_reward(delta_m2: float, nav: float, done_success: bool) -> RewardBreakdown:
    # Success grants no extra terminal bonus; the weighted sum is exhaustive.
    total = WEIGHT_NAV * nav + WEIGHT_EXP * delta_m2 + WEIGHT_TIME * TIME_PENALTY
    return RewardBreakdown(r_exp=delta_m2, r_nav=nav, r_time=TIME_PENALTY,
                           r_total=total)
