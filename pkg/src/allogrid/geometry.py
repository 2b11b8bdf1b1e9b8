"""Planar poses, rigid transforms and ray/rectangle intersection kernels.

Everything downstream (scene simulation, grid frames, ego-motion warping)
works in a single world convention: x right, y up, angles in radians
counter-clockwise from world +x, normalized to (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose2D:
    """Planar pose: position in meters, heading in radians CCW from +x."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose of `other` expressed in this pose's parent frame (self * other)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Map local (N, 2) points into the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[..., 0] = self.x + c * pts[..., 0] - s * pts[..., 1]
        out[..., 1] = self.y + s * pts[..., 0] + c * pts[..., 1]
        return out

    def inverse_transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Map parent-frame (N, 2) points into this pose's local frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(pts, dtype=float)
        dx = pts[..., 0] - self.x
        dy = pts[..., 1] - self.y
        out = np.empty_like(pts)
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        return out

    def to_list(self) -> list:
        return [self.x, self.y, self.theta]

    @classmethod
    def from_list(cls, v) -> "Pose2D":
        return cls(float(v[0]), float(v[1]), float(v[2]))


def unicycle_advance(pose: Pose2D, speed: float, yaw_rate: float, dt: float) -> Pose2D:
    """Advance a constant-twist (speed + yaw rate) motion by dt.

    Uses the exact arc solution so that composing k steps of dt equals one
    step of k*dt; degenerates to straight-line motion for small yaw rates.
    """
    if abs(yaw_rate) < 1e-12:
        return Pose2D(
            pose.x + speed * math.cos(pose.theta) * dt,
            pose.y + speed * math.sin(pose.theta) * dt,
            pose.theta,
        )
    r = speed / yaw_rate
    th1 = pose.theta + yaw_rate * dt
    return Pose2D(
        pose.x + r * (math.sin(th1) - math.sin(pose.theta)),
        pose.y - r * (math.cos(th1) - math.cos(pose.theta)),
        th1,
    )


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle given by its center pose and half-extents in the body frame."""

    pose: Pose2D
    half_length: float  # along body x
    half_width: float   # along body y

    def __post_init__(self):
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("rectangle half-extents must be positive")

    def corners(self) -> np.ndarray:
        """World-frame corners, CCW, shape (4, 2)."""
        hl, hw = self.half_length, self.half_width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return self.pose.transform_points(local)

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        local = self.pose.inverse_transform_points(np.asarray(pts, dtype=float))
        return (np.abs(local[..., 0]) <= self.half_length) & (
            np.abs(local[..., 1]) <= self.half_width
        )

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_list(),
            "half_length": self.half_length,
            "half_width": self.half_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedRect":
        return cls(Pose2D.from_list(d["pose"]), float(d["half_length"]), float(d["half_width"]))


def ray_rect_distances(
    origin: np.ndarray,
    directions: np.ndarray,
    rects: list[OrientedRect],
    max_range: float,
) -> np.ndarray:
    """Distance from `origin` to the nearest boundary of each rectangle per ray.

    origin: (2,); directions: (R, 2) unit vectors. Returns (R,) distances,
    max_range where a ray misses everything. Uses the slab method in each
    rectangle's body frame; a ray starting inside a rectangle reports the
    exit distance through the far boundary.
    """
    directions = np.asarray(directions, dtype=float)
    n_rays = directions.shape[0]
    best = np.full(n_rays, float(max_range))
    if not rects:
        return best
    for rect in rects:
        o_local = rect.pose.inverse_transform_points(origin[None, :])[0]
        c, s = math.cos(rect.pose.theta), math.sin(rect.pose.theta)
        dx = c * directions[:, 0] + s * directions[:, 1]
        dy = -s * directions[:, 0] + c * directions[:, 1]

        with np.errstate(divide="ignore", invalid="ignore"):
            inv_dx = np.where(np.abs(dx) > 1e-15, 1.0 / dx, np.inf)
            inv_dy = np.where(np.abs(dy) > 1e-15, 1.0 / dy, np.inf)
            tx1 = (-rect.half_length - o_local[0]) * inv_dx
            tx2 = (rect.half_length - o_local[0]) * inv_dx
            ty1 = (-rect.half_width - o_local[1]) * inv_dy
            ty2 = (rect.half_width - o_local[1]) * inv_dy

        # Rays parallel to an axis only pass the slab if the origin is inside it.
        para_x = np.abs(dx) <= 1e-15
        para_y = np.abs(dy) <= 1e-15
        in_x = np.abs(o_local[0]) <= rect.half_length
        in_y = np.abs(o_local[1]) <= rect.half_width

        tmin_x = np.where(para_x, np.where(in_x, -np.inf, np.inf), np.minimum(tx1, tx2))
        tmax_x = np.where(para_x, np.where(in_x, np.inf, -np.inf), np.maximum(tx1, tx2))
        tmin_y = np.where(para_y, np.where(in_y, -np.inf, np.inf), np.minimum(ty1, ty2))
        tmax_y = np.where(para_y, np.where(in_y, np.inf, -np.inf), np.maximum(ty1, ty2))

        t_enter = np.maximum(tmin_x, tmin_y)
        t_exit = np.minimum(tmax_x, tmax_y)
        hit = (t_enter <= t_exit) & (t_exit > 0)
        t_hit = np.where(t_enter > 0, t_enter, t_exit)  # inside -> exit distance
        best = np.where(hit & (t_hit < best), t_hit, best)
    return best
