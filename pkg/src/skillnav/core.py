"""Shared planar-geometry primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

# Footprint of the differential-drive agent; also the clearance required of
# annotated spawn poses.
ROBOT_RADIUS_M = 0.25


def wrap_angle(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def distance_to(self, other: "Point2 | Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Pose2:
    """Planar pose. theta is normalized into [-pi, pi) on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)

    def distance_to(self, other: "Point2 | Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)
