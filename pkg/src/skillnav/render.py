"""Plot and image outputs: trajectory overlays, skill traces, learning curves.

Every plot's underlying data is mirrored to CSV, so the images are optional
artifacts. The trajectory overlay is written as a raw raster whose pixel
dimensions are exactly the grid dimensions times an integer scale.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .evalharness import TrajectoryLog
from .world import DistanceField, MapMetadata, OccupancyGrid, compute_distance_field
from .core import Point2

_OCCUPIED_RGB = (40, 40, 48)
_UNREACHED_RGB = (210, 210, 214)
_TRAJ_RGB = (220, 40, 40)
_START_RGB = (30, 170, 60)
_GOAL_RGB = (250, 200, 30)


def trajectory_image(grid: OccupancyGrid, log: TrajectoryLog, path: str | Path,
                     field: DistanceField | None = None, scale: int = 4) -> Path:
    """Trajectory over the map with the true goal-distance field as backdrop.

    The image is (width_cells * scale) x (height_cells * scale) pixels.
    """
    if field is None:
        field = compute_distance_field(grid, Point2(*log.goal))
    vals = field.values
    finite = np.isfinite(vals) & ~grid.occ
    base = np.zeros((grid.height_cells, grid.width_cells, 3), dtype=np.uint8)
    base[:] = _UNREACHED_RGB
    if finite.any():
        norm = vals[finite] / max(float(vals[finite].max()), 1e-9)
        cmap = plt.get_cmap("viridis")
        base[finite] = (np.asarray(cmap(norm))[:, :3] * 255).astype(np.uint8)
    base[grid.occ] = _OCCUPIED_RGB

    canvas = np.kron(base, np.ones((scale, scale, 1), dtype=np.uint8))
    h_px = grid.height_cells * scale

    def to_px(x: float, y: float) -> tuple[int, int]:
        px = int(x / grid.resolution * scale)
        py = int(y / grid.resolution * scale)
        return (min(max(px, 0), grid.width_cells * scale - 1),
                min(max(py, 0), h_px - 1))

    def paint(px: int, py: int, rgb, r: int = 1) -> None:
        canvas[max(0, py - r):py + r + 1, max(0, px - r):px + r + 1] = rgb

    pts = [(p.x, p.y) for p in log.poses]
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        n = max(2, int(math.hypot(x1 - x0, y1 - y0) / grid.resolution * scale * 2))
        for i in range(n + 1):
            t = i / n
            px, py = to_px(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
            paint(px, py, _TRAJ_RGB, r=max(1, scale // 4))
    sx, sy = to_px(*pts[0])
    paint(sx, sy, _START_RGB, r=scale)
    gx, gy = to_px(*log.goal)
    paint(gx, gy, _GOAL_RGB, r=scale)

    img = Image.fromarray(canvas[::-1])  # row 0 at the bottom -> image top is max y
    path = Path(path)
    img.save(path)
    return path


def trajectory_csv(log: TrajectoryLog, path: str | Path) -> Path:
    """One row per step: pre-step pose, action, skill decision, reward terms."""
    path = Path(path)
    n_eta = len(log.etas[0]) if log.etas else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "x", "y", "theta", "action"]
                   + [f"eta{i}" for i in range(n_eta)]
                   + ["r_exp", "r_nav", "r_time", "r_total"])
        for t in range(len(log)):
            pose = log.poses[t]
            rb = log.breakdowns[t]
            eta = list(log.etas[t]) if log.etas else []
            w.writerow([t, repr(pose.x), repr(pose.y), repr(pose.theta),
                        log.actions[t]] + [repr(float(e)) for e in eta]
                       + [repr(rb.r_exp), repr(rb.r_nav), repr(rb.r_time),
                          repr(rb.r_total)])
    return path


def eta_trace_plot(log: TrajectoryLog, path: str | Path) -> Path:
    if not log.etas:
        raise ValueError("trajectory has no skill decisions to plot")
    etas = np.stack(log.etas)
    fig, ax = plt.subplots(figsize=(8, 3))
    for i in range(etas.shape[1]):
        ax.plot(etas[:, i], label=f"skill {i + 1}")
    ax.set_xlabel("step")
    ax.set_ylabel("skill decision")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="upper right")
    ax.set_title(f"skill decision trace ({log.outcome})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def learning_curve_plot(metrics_csv: str | Path, path: str | Path,
                        window: int = 25) -> Path:
    episodes, rewards, successes, phases = [], [], [], []
    with open(metrics_csv) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            episodes.append(int(row["episode"]))
            rewards.append(float(row["reward"]))
            successes.append(float(row["success"]))
            phases.append(row["phase"])
    episodes = np.array(episodes)
    rewards = np.array(rewards)
    successes = np.array(successes)
    phases = np.array(phases)

    fig, axes = plt.subplots(1, 2, figsize=(10, 3.2))
    for phase, color in (("train", "tab:blue"), ("eval", "tab:orange")):
        sel = phases == phase
        if not sel.any():
            continue
        e, r, s = episodes[sel], rewards[sel], successes[sel]
        if len(r) >= window:
            kernel = np.ones(window) / window
            r_s = np.convolve(r, kernel, mode="valid")
            s_s = np.convolve(s, kernel, mode="valid")
            e_s = e[window - 1:]
        else:
            r_s, s_s, e_s = r, s, e
        axes[0].plot(e_s, r_s, color=color, label=phase)
        axes[1].plot(e_s, s_s, color=color, label=phase)
    axes[0].set_xlabel("episode")
    axes[0].set_ylabel(f"reward (window {window})")
    axes[1].set_xlabel("episode")
    axes[1].set_ylabel("success rate")
    axes[1].set_ylim(-0.05, 1.05)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def render_outputs(logs: list[TrajectoryLog], grid: OccupancyGrid,
                   meta: MapMetadata, out_dir: str | Path,
                   metrics_csv: str | Path | None = None,
                   max_trajectories: int = 4) -> list[Path]:
    """Standard artifact bundle for a batch of episode logs."""
    if not logs:
        raise ValueError("no trajectory logs to render")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    fields: dict[tuple[float, float], DistanceField] = {}
    for k, log in enumerate(logs[:max_trajectories]):
        if log.goal not in fields:
            fields[log.goal] = compute_distance_field(grid, Point2(*log.goal))
        tag = f"s{log.seed}_e{log.episode}" if log.seed >= 0 else f"{k}"
        written.append(trajectory_image(grid, log, out_dir / f"trajectory_{tag}.png",
                                        field=fields[log.goal]))
        written.append(trajectory_csv(log, out_dir / f"trajectory_{tag}.csv"))
        if log.etas:
            written.append(eta_trace_plot(log, out_dir / f"eta_trace_{tag}.png"))
    if metrics_csv is not None:
        written.append(learning_curve_plot(metrics_csv,
                                           out_dir / "learning_curve.png"))
    return written
