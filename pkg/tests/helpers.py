"""Shared fixtures and independent oracles used across test modules.

The oracles here deliberately avoid the library's traversal code: ranges via
dense 1 mm marching, distance fields via Bellman relaxation sweeps, coverage
via a per-cell segment/rectangle slab test.
"""

from __future__ import annotations

import math

import numpy as np

from skillnav.core import Point2, Pose2
from skillnav.raycast import EGO_BEAM_ANGLES, MAX_RANGE_M
from skillnav.world import MapMetadata, OccupancyGrid, UNREACHABLE


def grid_from_rows(rows, resolution=0.1):
    """Build a grid from top-first ASCII rows ('#' occupied)."""
    occ = np.array([[c == "#" for c in row] for row in rows[::-1]], dtype=bool)
    return OccupancyGrid(occ.shape[1], occ.shape[0], resolution, occ)


def free_room_grid(cells, resolution=0.1, border=1):
    occ = np.zeros((cells, cells), dtype=bool)
    occ[:border, :] = occ[-border:, :] = True
    occ[:, :border] = occ[:, -border:] = True
    return OccupancyGrid(cells, cells, resolution, occ)


def meta_for(grid, name="fixture", max_steps=400, train=None, evals=None):
    return MapMetadata(name=name, extent=grid.extent,
                       train_spawns=train or [], eval_spawns=evals or [],
                       max_episode_steps=max_steps)


def marching_ranges(grid, pose, step=0.001, t_max=MAX_RANGE_M):
    """Dense-sampling range oracle: first sample inside an occupied cell."""
    angles = pose.theta + EGO_BEAM_ANGLES
    t = np.arange(1, int(round(t_max / step)) + 1) * step
    px = pose.x + np.cos(angles)[:, None] * t[None, :]
    py = pose.y + np.sin(angles)[:, None] * t[None, :]
    ix = np.floor(px / grid.resolution).astype(int)
    iy = np.floor(py / grid.resolution).astype(int)
    inside = ((ix >= 0) & (ix < grid.width_cells)
              & (iy >= 0) & (iy < grid.height_cells))
    hit = ~inside
    hit[inside] = grid.occ[iy[inside], ix[inside]]
    any_hit = hit.any(axis=1)
    first = np.argmax(hit, axis=1)
    return np.where(any_hit, t[first], t_max)


def bellman_distance_field(grid, goal_cell, max_sweeps=10_000):
    """Iterative-relaxation oracle for the 8-connected geodesic field."""
    res = grid.resolution
    h, w = grid.occ.shape
    dist = np.full((h, w), UNREACHABLE)
    gx, gy = goal_cell
    dist[gy, gx] = 0.0
    moves = [(1, 0, res), (-1, 0, res), (0, 1, res), (0, -1, res),
             (1, 1, res * math.sqrt(2)), (1, -1, res * math.sqrt(2)),
             (-1, 1, res * math.sqrt(2)), (-1, -1, res * math.sqrt(2))]
    for _ in range(max_sweeps):
        changed = False
        for iy in range(h):
            for ix in range(w):
                if grid.occ[iy, ix]:
                    continue
                best = dist[iy, ix]
                for dx, dy, c in moves:
                    nx, ny = ix + dx, iy + dy
                    if 0 <= nx < w and 0 <= ny < h and dist[ny, nx] + c < best:
                        best = dist[ny, nx] + c
                if best < dist[iy, ix]:
                    dist[iy, ix] = best
                    changed = True
        if not changed:
            break
    return dist


def rasterized_covered_cells(grid, pose, raw_ranges):
    """Per-cell slab-test oracle: cells whose rectangle the beam segment
    crosses with positive length, before the range cutoff, excluding occupied
    cells."""
    res = grid.resolution
    cells = set()
    for k, ang in enumerate(pose.theta + EGO_BEAM_ANGLES):
        dx, dy = math.cos(ang), math.sin(ang)
        L = float(raw_ranges[k])
        x1, y1 = pose.x + L * dx, pose.y + L * dy
        ix_lo = int(math.floor(min(pose.x, x1) / res)) - 1
        ix_hi = int(math.floor(max(pose.x, x1) / res)) + 1
        iy_lo = int(math.floor(min(pose.y, y1) / res)) - 1
        iy_hi = int(math.floor(max(pose.y, y1) / res)) + 1
        for ix in range(max(ix_lo, 0), min(ix_hi + 1, grid.width_cells)):
            for iy in range(max(iy_lo, 0), min(iy_hi + 1, grid.height_cells)):
                if grid.occ[iy, ix]:
                    continue
                t0, t1 = 0.0, L
                ok = True
                for p0, d, lo, hi in ((pose.x, dx, ix * res, (ix + 1) * res),
                                      (pose.y, dy, iy * res, (iy + 1) * res)):
                    if d == 0.0:
                        if not lo <= p0 <= hi:
                            ok = False
                            break
                    else:
                        ta, tb = (lo - p0) / d, (hi - p0) / d
                        if ta > tb:
                            ta, tb = tb, ta
                        t0, t1 = max(t0, ta), min(t1, tb)
                if ok and t0 < t1:
                    cells.add((ix, iy))
    return cells


def random_free_pose(grid, rng, clearance=0.3):
    """Rejection-sample a pose whose disc has the given clearance."""
    w_m, h_m = grid.extent
    while True:
        x = rng.uniform(0, w_m)
        y = rng.uniform(0, h_m)
        if not grid.disc_blocked(x, y, clearance):
            return Pose2(x, y, rng.uniform(-math.pi, math.pi))


def point(x, y):
    return Point2(x, y)
