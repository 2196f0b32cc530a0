"""Occupancy-grid worlds: map IO, geometric queries, spawns, distance fields.

Map file format
---------------
A map is a single text file with a header and a grid section separated by a
line containing only ``---``.

Header lines are ``key = value``:

* ``name`` -- map identifier,
* ``resolution`` -- meters per cell (> 0),
* ``max_episode_steps`` -- episode step budget on this map,
* ``train_spawn = x y theta`` -- repeated; candidate training spawn poses,
* ``eval_spawn = x y theta`` -- repeated; evaluation start/goal locations.

Coordinates are meters, theta radians. The grid section has one text row per
cell row, ``#`` occupied and ``.`` free, with the top text row at maximum y.
``serialize_map`` emits the canonical form; a canonical file survives
load -> serialize byte for byte.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Point2, Pose2, ROBOT_RADIUS_M

OCCUPIED_CHAR = "#"
FREE_CHAR = "."

#: Sentinel stored in a distance field for cells with no path to the goal
#: (occupied cells included).
UNREACHABLE = math.inf


class MapError(ValueError):
    """Base class for map-file problems."""


class MapFormatError(MapError):
    """The file does not parse as the map format."""


class MapValidationError(MapError):
    """The file parses but violates a world invariant."""


@dataclass
class OccupancyGrid:
    """Binary free/occupied world map with metric resolution.

    ``occ[iy, ix]`` is True when the cell is occupied; row 0 lies at y = 0
    (the *bottom* of the world; note map files store the top row first).
    """

    width_cells: int
    height_cells: int
    resolution: float
    occ: np.ndarray

    def __post_init__(self) -> None:
        self.occ = np.asarray(self.occ, dtype=bool)
        if self.occ.shape != (self.height_cells, self.width_cells):
            raise MapValidationError(
                f"grid shape {self.occ.shape} != "
                f"({self.height_cells}, {self.width_cells})"
            )
        if not self.resolution > 0:
            raise MapValidationError("resolution must be > 0")

    @property
    def cells(self) -> np.ndarray:
        """Row-major flat boolean view (row 0 at y = 0)."""
        return self.occ.reshape(-1)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width_cells * self.resolution,
                self.height_cells * self.resolution)

    @property
    def free_area_m2(self) -> float:
        return float((~self.occ).sum()) * self.resolution ** 2

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(ix, iy) of the cell containing the point; no bounds check."""
        return (int(math.floor(x / self.resolution)),
                int(math.floor(y / self.resolution)))

    def in_bounds_cell(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width_cells and 0 <= iy < self.height_cells

    def occupied_at(self, x: float, y: float) -> bool:
        """Occupancy of the cell containing (x, y); out of bounds counts occupied."""
        ix, iy = self.cell_of(x, y)
        if not self.in_bounds_cell(ix, iy):
            return True
        return bool(self.occ[iy, ix])

    def disc_blocked(self, x: float, y: float, radius: float) -> bool:
        """True iff a disc at (x, y) overlaps any occupied cell (or leaves the map)."""
        res = self.resolution
        ix_lo = int(math.floor((x - radius) / res))
        ix_hi = int(math.floor((x + radius) / res))
        iy_lo = int(math.floor((y - radius) / res))
        iy_hi = int(math.floor((y + radius) / res))
        if ix_lo < 0 or iy_lo < 0 or ix_hi >= self.width_cells or iy_hi >= self.height_cells:
            return True
        sub = self.occ[iy_lo:iy_hi + 1, ix_lo:ix_hi + 1]
        if not sub.any():
            return False
        # Distance from the disc center to each candidate cell rectangle.
        xs = np.arange(ix_lo, ix_hi + 1) * res
        ys = np.arange(iy_lo, iy_hi + 1) * res
        cx = np.clip(x, xs, xs + res)
        cy = np.clip(y, ys, ys + res)
        d2 = (cx[None, :] - x) ** 2 + (cy[:, None] - y) ** 2
        return bool((d2[sub] < radius * radius).any())

    def has_closed_boundary(self) -> bool:
        return bool(self.occ[0, :].all() and self.occ[-1, :].all()
                    and self.occ[:, 0].all() and self.occ[:, -1].all())


@dataclass
class MapMetadata:
    name: str
    extent: tuple[float, float]
    train_spawns: list[Pose2]
    eval_spawns: list[Pose2]
    max_episode_steps: int
    diagonal_m: float = field(init=False)

    def __post_init__(self) -> None:
        self.diagonal_m = math.hypot(*self.extent)


@dataclass
class DistanceField:
    """Per-cell geodesic distance to a goal cell, meters.

    Unreachable and occupied cells hold ``UNREACHABLE``. Never part of the
    agent's observation; used for plots and the scripted oracle only.
    """

    values: np.ndarray
    goal_cell: tuple[int, int]
    resolution: float

    def at_point(self, x: float, y: float) -> float:
        iy = int(math.floor(y / self.resolution))
        ix = int(math.floor(x / self.resolution))
        h, w = self.values.shape
        if not (0 <= ix < w and 0 <= iy < h):
            return UNREACHABLE
        return float(self.values[iy, ix])


def parse_map(text: str) -> tuple[OccupancyGrid, MapMetadata]:
    lines = text.split("\n")
    try:
        sep = lines.index("---")
    except ValueError:
        raise MapFormatError("missing '---' separator") from None

    name = None
    resolution = None
    max_steps = None
    train_spawns: list[Pose2] = []
    eval_spawns: list[Pose2] = []
    for ln in lines[:sep]:
        if not ln.strip():
            raise MapFormatError("blank line in header")
        if "=" not in ln:
            raise MapFormatError(f"header line without '=': {ln!r}")
        key, _, value = ln.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "name":
            name = value
        elif key == "resolution":
            resolution = float(value)
        elif key == "max_episode_steps":
            max_steps = int(value)
        elif key in ("train_spawn", "eval_spawn"):
            parts = value.split()
            if len(parts) != 3:
                raise MapFormatError(f"spawn needs 'x y theta': {ln!r}")
            pose = Pose2(float(parts[0]), float(parts[1]), float(parts[2]))
            (train_spawns if key == "train_spawn" else eval_spawns).append(pose)
        else:
            raise MapFormatError(f"unknown header key {key!r}")
    if name is None or resolution is None or max_steps is None:
        raise MapFormatError("header must set name, resolution, max_episode_steps")
    if resolution <= 0:
        raise MapFormatError("resolution must be > 0")
    if max_steps <= 0:
        raise MapFormatError("max_episode_steps must be > 0")

    rows = [ln for ln in lines[sep + 1:] if ln != ""]
    if not rows:
        raise MapFormatError("empty grid section")
    width = len(rows[0])
    occ_rows = []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"grid row {r} has length {len(row)} != {width}")
        bad = set(row) - {OCCUPIED_CHAR, FREE_CHAR}
        if bad:
            raise MapFormatError(f"grid row {r} has invalid characters {bad!r}")
        occ_rows.append([c == OCCUPIED_CHAR for c in row])
    # file stores top row first; flip so row 0 sits at y = 0
    occ = np.array(occ_rows[::-1], dtype=bool)
    grid = OccupancyGrid(width, len(rows), resolution, occ)
    meta = MapMetadata(name=name, extent=grid.extent,
                       train_spawns=train_spawns, eval_spawns=eval_spawns,
                       max_episode_steps=max_steps)
    _validate(grid, meta)
    return grid, meta


def _validate(grid: OccupancyGrid, meta: MapMetadata) -> None:
    if not grid.has_closed_boundary():
        raise MapValidationError("map boundary is not fully occupied")
    for kind, spawns in (("train", meta.train_spawns), ("eval", meta.eval_spawns)):
        for p in spawns:
            if grid.disc_blocked(p.x, p.y, ROBOT_RADIUS_M):
                raise MapValidationError(
                    f"{kind} spawn ({p.x}, {p.y}) lacks {ROBOT_RADIUS_M} m clearance")


def load_map(path: str | Path) -> tuple[OccupancyGrid, MapMetadata]:
    return parse_map(Path(path).read_text())


def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_map(grid: OccupancyGrid, meta: MapMetadata) -> str:
    out = [f"name = {meta.name}",
           f"resolution = {_fmt(grid.resolution)}",
           f"max_episode_steps = {meta.max_episode_steps}"]
    for p in meta.train_spawns:
        out.append(f"train_spawn = {_fmt(p.x)} {_fmt(p.y)} {_fmt(p.theta)}")
    for p in meta.eval_spawns:
        out.append(f"eval_spawn = {_fmt(p.x)} {_fmt(p.y)} {_fmt(p.theta)}")
    out.append("---")
    for iy in range(grid.height_cells - 1, -1, -1):
        row = grid.occ[iy]
        out.append("".join(OCCUPIED_CHAR if c else FREE_CHAR for c in row))
    return "\n".join(out) + "\n"


def save_map(path: str | Path, grid: OccupancyGrid, meta: MapMetadata) -> None:
    Path(path).write_text(serialize_map(grid, meta))


def builtin_map_path(name: str) -> Path:
    """Path of a map shipped with the package (e.g. 'maze', 'subt_cave')."""
    p = Path(__file__).parent / "maps" / f"{name}.map"
    if not p.exists():
        raise FileNotFoundError(f"no builtin map named {name!r}")
    return p


def load_builtin_map(name: str) -> tuple[OccupancyGrid, MapMetadata]:
    return load_map(builtin_map_path(name))


def resolve_map(name_or_path: str | Path) -> tuple[OccupancyGrid, MapMetadata]:
    """Load a map by builtin name or by filesystem path."""
    p = Path(name_or_path)
    if p.exists():
        return load_map(p)
    try:
        return load_builtin_map(str(name_or_path))
    except FileNotFoundError:
        raise MapError(f"map {name_or_path!r} is neither a file nor a builtin map") from None


_SQRT2 = math.sqrt(2.0)
_NEIGHBORS = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
              (1, 1, _SQRT2), (1, -1, _SQRT2), (-1, 1, _SQRT2), (-1, -1, _SQRT2)]


def compute_distance_field(grid: OccupancyGrid, goal: Point2 | Pose2) -> DistanceField:
    """8-connected geodesic distance over free cells; diagonals cost res*sqrt(2)."""
    gx, gy = grid.cell_of(goal.x, goal.y)
    if not grid.in_bounds_cell(gx, gy) or grid.occ[gy, gx]:
        raise ValueError("goal cell is occupied or out of bounds")
    h, w = grid.occ.shape
    res = grid.resolution
    occ = grid.occ
    dist = np.full((h, w), UNREACHABLE, dtype=np.float64)
    dist[gy, gx] = 0.0
    heap = [(0.0, gx, gy)]
    while heap:
        d, ix, iy = heapq.heappop(heap)
        if d > dist[iy, ix]:
            continue
        for dx, dy, c in _NEIGHBORS:
            nx, ny = ix + dx, iy + dy
            if 0 <= nx < w and 0 <= ny < h and not occ[ny, nx]:
                nd = d + c * res
                if nd < dist[ny, nx]:
                    dist[ny, nx] = nd
                    heapq.heappush(heap, (nd, nx, ny))
    return DistanceField(values=dist, goal_cell=(gx, gy), resolution=res)


def sample_spawn_goal(meta: MapMetadata, mode: str,
                      rng: np.random.Generator) -> tuple[Pose2, Point2]:
    """Draw a (start pose, goal point) pair from the map's spawn annotations.

    Train mode draws two distinct train spawns and randomizes the start
    orientation uniformly in [-pi, pi); eval mode draws an ordered pair of
    eval spawns and keeps the annotated orientation.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    spawns = meta.train_spawns if mode == "train" else meta.eval_spawns
    if len(spawns) < 2:
        raise ValueError(f"map {meta.name!r} has fewer than 2 {mode} spawns")
    i = int(rng.integers(len(spawns)))
    j = int(rng.integers(len(spawns) - 1))
    if j >= i:
        j += 1
    a, b = spawns[i], spawns[j]
    if mode == "train":
        theta = float(rng.uniform(-math.pi, math.pi))
        start = Pose2(a.x, a.y, theta)
    else:
        start = a
    return start, Point2(b.x, b.y)
