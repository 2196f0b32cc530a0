"""Differential-drive simulation: discrete actions, collision-stopped motion,
normalized observations, and the episode loop.

One `NavEnv` instance is single-threaded and owns its random stream; many
instances may share one read-only `OccupancyGrid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Point2, Pose2, ROBOT_RADIUS_M, wrap_angle
from .raycast import BEAM_COUNT, MAX_RANGE_M, raycast_scan, trace_beams, world_beam_angles
from .reward import CoverageGrid, RewardBreakdown, nav_reward, total_reward, update_coverage
from .world import MapMetadata, OccupancyGrid, sample_spawn_goal

DT_S = 0.1
V_MAX_MPS = 2.5
OMEGA_MAX_RADPS = math.pi
GOAL_RADIUS_M = 0.5
N_ACTIONS = 5

ACTION_NAMES = ("no-operation", "forward", "backward", "turn-left", "turn-right")


@dataclass(frozen=True)
class Twist:
    v: float
    omega: float


_ACTION_TWISTS = (
    Twist(0.0, 0.0),
    Twist(2.5, 0.0),
    Twist(-1.25, 0.0),
    Twist(0.0, math.pi),
    Twist(0.0, -math.pi),
)


def action_to_twist(action: int) -> Twist:
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"action index {action} outside 0..{N_ACTIONS - 1}")
    return _ACTION_TWISTS[action]


@dataclass
class NoiseConfig:
    """Robustness knobs: motion disturbance sigma and relative range noise."""

    disturbance_sigma: float = 0.0
    obs_noise_level: float = 0.0

    def __post_init__(self) -> None:
        if self.disturbance_sigma < 0 or self.obs_noise_level < 0:
            raise ValueError("noise levels must be >= 0")


@dataclass
class Observation:
    """Normalized agent input: 71 ranges plus goal distance and bearing, all in [0, 1]."""

    ranges: np.ndarray
    goal_dist: float
    goal_bearing: float

    def as_vector(self) -> np.ndarray:
        out = np.empty(BEAM_COUNT + 2, dtype=np.float32)
        out[:BEAM_COUNT] = self.ranges
        out[BEAM_COUNT] = self.goal_dist
        out[BEAM_COUNT + 1] = self.goal_bearing
        return out


OBS_DIM = BEAM_COUNT + 2


@dataclass
class EpisodeState:
    pose: Pose2
    goal: Point2
    step_count: int
    done: bool
    outcome: str  # running | success | timeout


def step_kinematics(grid: OccupancyGrid, pose: Pose2, twist: Twist,
                    noise: NoiseConfig, rng: np.random.Generator) -> Pose2:
    """First-order Euler step with collision stopping.

    Disturbance noise perturbs both command channels (scaled by each
    channel's maximum magnitude) even when the command is zero. If the swept
    robot disc would touch an occupied cell anywhere along the translation,
    the position stays put; rotation is always applied.
    """
    v, omega = twist.v, twist.omega
    if noise.disturbance_sigma > 0:
        v += float(rng.normal(0.0, noise.disturbance_sigma * V_MAX_MPS))
        omega += float(rng.normal(0.0, noise.disturbance_sigma * OMEGA_MAX_RADPS))
    theta_new = wrap_angle(pose.theta + omega * DT_S)
    dx = v * DT_S * math.cos(pose.theta)
    dy = v * DT_S * math.sin(pose.theta)
    if dx == 0.0 and dy == 0.0:
        return Pose2(pose.x, pose.y, theta_new)
    dist = math.hypot(dx, dy)
    n_sub = max(1, int(math.ceil(dist / (0.5 * grid.resolution))))
    for s in range(1, n_sub + 1):
        f = s / n_sub
        if grid.disc_blocked(pose.x + f * dx, pose.y + f * dy, ROBOT_RADIUS_M):
            return Pose2(pose.x, pose.y, theta_new)
    return Pose2(pose.x + dx, pose.y + dy, theta_new)


def build_observation(raw_ranges: np.ndarray, pose: Pose2, goal: Point2,
                      meta: MapMetadata, noise: NoiseConfig,
                      rng: np.random.Generator) -> Observation:
    """Normalize a scan and the goal vector into [0, 1] observation space."""
    raw = np.asarray(raw_ranges, dtype=np.float64)
    if noise.obs_noise_level > 0:
        u = rng.uniform(-noise.obs_noise_level, noise.obs_noise_level, raw.shape)
        raw = np.clip(raw * (1.0 + u), 0.0, MAX_RANGE_M)
    ranges = (raw / MAX_RANGE_M).astype(np.float32)
    d = pose.distance_to(goal)
    goal_dist = min(d, meta.diagonal_m) / meta.diagonal_m
    psi = wrap_angle(math.atan2(goal.y - pose.y, goal.x - pose.x) - pose.theta)
    goal_bearing = (psi + math.pi) / (2.0 * math.pi)
    return Observation(ranges=ranges, goal_dist=float(goal_dist),
                       goal_bearing=float(goal_bearing))


def check_goal_reached(pose: Pose2, goal: Point2) -> bool:
    return pose.distance_to(goal) < GOAL_RADIUS_M


class NavEnv:
    """Episode driver tying kinematics, sensing, and reward together."""

    def __init__(self, grid: OccupancyGrid, meta: MapMetadata,
                 noise: NoiseConfig | None = None,
                 rng: np.random.Generator | None = None) -> None:
        self.grid = grid
        self.meta = meta
        self.noise = noise if noise is not None else NoiseConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self._coverage = CoverageGrid(grid)
        self.state: EpisodeState | None = None
        self.last_raw_ranges: np.ndarray | None = None

    def reset(self, mode: str = "train") -> tuple[EpisodeState, Observation]:
        start, goal = sample_spawn_goal(self.meta, mode, self.rng)
        self.state = EpisodeState(pose=start, goal=goal, step_count=0,
                                  done=False, outcome="running")
        self._coverage.reset()
        raw = raycast_scan(self.grid, start)
        self.last_raw_ranges = raw
        update_coverage(self._coverage, start, raw)  # initial visibility, no reward
        obs = build_observation(raw, start, goal, self.meta, self.noise, self.rng)
        return self.state, obs

    def step(self, action: int) -> tuple[Observation, RewardBreakdown, EpisodeState]:
        st = self.state
        if st is None or st.done:
            raise RuntimeError("step() called on a finished or unreset episode")
        twist = action_to_twist(action)
        pose = step_kinematics(self.grid, st.pose, twist, self.noise, self.rng)
        raw = raycast_scan(self.grid, pose)
        self.last_raw_ranges = raw
        delta = update_coverage(self._coverage, pose, raw)
        nav = nav_reward(pose, st.goal, raw)
        st.pose = pose
        st.step_count += 1
        if check_goal_reached(pose, st.goal):
            st.done = True
            st.outcome = "success"
        elif st.step_count >= self.meta.max_episode_steps:
            st.done = True
            st.outcome = "timeout"
        breakdown = total_reward(delta, nav, st.outcome == "success")
        obs = build_observation(raw, pose, st.goal, self.meta, self.noise, self.rng)
        return obs, breakdown, st

    @property
    def covered_area_m2(self) -> float:
        return self._coverage.covered_area_m2
