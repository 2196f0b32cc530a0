"""Scripted distance-field navigator.

A non-learning agent that descends the geodesic distance field computed on
an obstacle-inflated copy of the map. Each step it simulates every discrete
action through the real (noise-free) kinematics and picks the one with the
best resulting field value plus heading alignment to a descent waypoint;
the collision model is therefore accounted for directly, so blocked motions
score as no progress. Validates the evaluation harness and the
noise-injection path independently of any training.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ROBOT_RADIUS_M, wrap_angle
from .sim import NoiseConfig, action_to_twist, step_kinematics
from .world import OccupancyGrid, compute_distance_field

_LOOKAHEAD_CELLS = 8
_ERR_WEIGHT = 0.5          # meters of field value traded per radian of misalignment
_RING_PENALTY = 0.25       # discourages hugging the inflation ring
_BLOCK_PENALTY = 0.2       # blocked translation is worse than turning
_GOAL_DIRECT_M = 1.2       # inside this field value the waypoint is the goal itself
# preference order on near-ties: keep moving
_ACTION_ORDER = (1, 3, 4, 2, 0)
_NO_NOISE = NoiseConfig()


def inflate_obstacles(grid: OccupancyGrid, radius: float) -> OccupancyGrid:
    """Mark every cell whose center lies within `radius` of an occupied cell."""
    res = grid.resolution
    reach = int(math.ceil(radius / res + 0.5))
    occ = grid.occ
    out = occ.copy()
    h, w = occ.shape
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            gap = math.hypot(max(abs(dx) - 0.5, 0.0), max(abs(dy) - 0.5, 0.0)) * res
            if gap > radius or (dx == 0 and dy == 0):
                continue
            src_y = slice(max(0, -dy), min(h, h - dy))
            src_x = slice(max(0, -dx), min(w, w - dx))
            dst_y = slice(max(0, dy), min(h, h + dy))
            dst_x = slice(max(0, dx), min(w, w + dx))
            out[dst_y, dst_x] |= occ[src_y, src_x]
    return OccupancyGrid(grid.width_cells, grid.height_cells, res, out)


class OracleAgent:
    """Greedy one-step lookahead over the goal distance field."""

    def __init__(self, inflate_m: float = ROBOT_RADIUS_M + 0.10) -> None:
        self.inflate_m = inflate_m
        self._field_cache: dict[tuple[int, tuple[int, int]], np.ndarray] = {}
        self._inflated: dict[int, OccupancyGrid] = {}
        self._rng = np.random.default_rng(0)  # never drawn from (sigma = 0)
        self._env = None
        self._grid = None
        self._values = None
        self._recent: list[tuple[float, float]] = []
        self._escape = 0

    def begin_episode(self, env) -> None:
        self._env = env
        grid = env.grid
        key = id(grid)
        if key not in self._inflated:
            self._inflated[key] = inflate_obstacles(grid, self.inflate_m)
        inflated = self._inflated[key]
        goal = env.state.goal
        gx, gy = grid.cell_of(goal.x, goal.y)
        fkey = (key, (gx, gy))
        if fkey not in self._field_cache:
            work = inflated.occ.copy()
            if work[gy, gx]:
                # the goal can sit inside the inflation ring; carve the true
                # free cells around it back open so the field exists there
                r = 3
                ys = slice(max(0, gy - r), gy + r + 1)
                xs = slice(max(0, gx - r), gx + r + 1)
                work[ys, xs] &= grid.occ[ys, xs]
            wgrid = OccupancyGrid(grid.width_cells, grid.height_cells,
                                  grid.resolution, work)
            self._field_cache[fkey] = compute_distance_field(wgrid, goal).values
        self._values = self._field_cache[fkey]
        self._grid = grid
        self._recent = []
        self._escape = 0

    # ----------------------------------------------------------- internals

    def _nearest_finite(self, ix: int, iy: int) -> tuple[int, int, float]:
        """(cell, extra penalty) of the closest field-carrying cell."""
        vals = self._values
        h, w = vals.shape
        ix = min(max(ix, 0), w - 1)
        iy = min(max(iy, 0), h - 1)
        if np.isfinite(vals[iy, ix]):
            return ix, iy, 0.0
        for r in range(1, 5):
            y0, y1 = max(0, iy - r), min(h, iy + r + 1)
            x0, x1 = max(0, ix - r), min(w, ix + r + 1)
            sub = vals[y0:y1, x0:x1]
            if np.isfinite(sub).any():
                flat = np.where(np.isfinite(sub), sub, np.inf)
                oy, ox = np.unravel_index(np.argmin(flat), sub.shape)
                return x0 + int(ox), y0 + int(oy), _RING_PENALTY * r
        return ix, iy, 10.0

    def _field_at(self, x: float, y: float) -> float:
        grid = self._grid
        ix, iy = grid.cell_of(x, y)
        cx, cy, pen = self._nearest_finite(ix, iy)
        return float(self._values[cy, cx]) + pen

    def _segment_clear(self, x0: float, y0: float, x1: float, y1: float) -> bool:
        """Swept-disc check of the straight segment between two points."""
        grid = self._grid
        dist = math.hypot(x1 - x0, y1 - y0)
        n = max(1, int(math.ceil(dist / (0.5 * grid.resolution))))
        for s in range(1, n + 1):
            f = s / n
            if grid.disc_blocked(x0 + f * (x1 - x0), y0 + f * (y1 - y0),
                                 ROBOT_RADIUS_M + 0.05):
                return False
        return True

    def _waypoint(self, x: float, y: float) -> tuple[float, float]:
        """Furthest descent-path cell reachable in a straight disc-clear line."""
        grid = self._grid
        vals = self._values
        goal = self._env.state.goal
        ix, iy = grid.cell_of(x, y)
        cx, cy, _ = self._nearest_finite(ix, iy)
        if vals[cy, cx] < _GOAL_DIRECT_M and self._segment_clear(x, y, goal.x, goal.y):
            return goal.x, goal.y
        h, w = vals.shape
        res = grid.resolution
        chosen = ((cx + 0.5) * res, (cy + 0.5) * res)
        first = True
        for _ in range(_LOOKAHEAD_CELLS):
            best = (vals[cy, cx], cx, cy)
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    nx, ny = cx + dx, cy + dy
                    if 0 <= nx < w and 0 <= ny < h and vals[ny, nx] < best[0]:
                        best = (vals[ny, nx], nx, ny)
            if (best[1], best[2]) == (cx, cy):
                break
            cx, cy = best[1], best[2]
            candidate = ((cx + 0.5) * res, (cy + 0.5) * res)
            if first or self._segment_clear(x, y, *candidate):
                chosen = candidate
                first = False
            else:
                break
        return chosen

    def act(self, obs) -> int:
        env = self._env
        pose = env.state.pose
        grid = self._grid

        self._recent.append((pose.x, pose.y))
        if len(self._recent) > 15:
            self._recent.pop(0)
            span = max(math.hypot(pose.x - px, pose.y - py)
                       for px, py in self._recent)
            if span < 0.05 and self._escape == 0:
                # long stall with no translation: force turn/advance pulses
                self._escape = 4
                self._recent = []
        if self._escape > 0:
            self._escape -= 1
            return 3 if self._escape % 2 == 1 else 1

        wx, wy = self._waypoint(pose.x, pose.y)
        fwd = action_to_twist(1)
        best_action, best_score = 0, math.inf
        for a in _ACTION_ORDER:
            nxt = step_kinematics(grid, pose, action_to_twist(a), _NO_NOISE,
                                  self._rng)
            # probe one extra forward step so turning toward a clear heading
            # earns the field progress it enables
            probe = step_kinematics(grid, nxt, fwd, _NO_NOISE, self._rng)
            err = abs(wrap_angle(math.atan2(wy - nxt.y, wx - nxt.x) - nxt.theta))
            score = self._field_at(probe.x, probe.y) + _ERR_WEIGHT * err
            if a in (1, 2) and (nxt.x, nxt.y) == (pose.x, pose.y):
                score += _BLOCK_PENALTY  # commanded translation went nowhere
            if score < best_score - 1e-9:
                best_action, best_score = a, score
        return best_action
