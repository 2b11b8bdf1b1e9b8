"""Synthetic urban-like scenes and a 2D lidar simulator.

A Scenario holds static rectangular obstacles, rectangular agents moving on
constant-twist (speed + yaw rate) arcs, and an ego vehicle of the same kind.
Agent poses are closed-form functions of the frame index, so any frame can be
evaluated independently and replays are bit-identical for a given seed.

Sensor logs are newline-delimited JSON, one record per frame:
``{"t": int, "ego_pose": [x, y, theta], "rays": [[range, bearing, hit], ...]}``
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import OrientedRect, Pose2D, ray_rect_distances, unicycle_advance

DEFAULT_N_RAYS = 720
DEFAULT_MAX_RANGE = 50.0
DEFAULT_DT = 0.1
MIN_FRAMES = 35


@dataclass(frozen=True)
class Agent:
    """A rectangular agent on a constant speed / yaw-rate arc."""

    id: int
    kind: str  # "vehicle" | "pedestrian"
    pose: Pose2D
    speed: float
    yaw_rate: float
    half_length: float
    half_width: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("agent speed must be >= 0")
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("agent footprint extents must be > 0")
        if self.kind not in ("vehicle", "pedestrian"):
            raise ValueError(f"unknown agent kind {self.kind!r}")

    def pose_at(self, t: int, dt: float) -> Pose2D:
        """Pose after t frames; exact arc, so O(1) in t."""
        return unicycle_advance(self.pose, self.speed, self.yaw_rate, t * dt)

    def footprint_at(self, t: int, dt: float) -> OrientedRect:
        return OrientedRect(self.pose_at(t, dt), self.half_length, self.half_width)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "pose": self.pose.to_list(),
            "speed": self.speed,
            "yaw_rate": self.yaw_rate,
            "half_length": self.half_length,
            "half_width": self.half_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Agent":
        return cls(
            id=int(d["id"]),
            kind=d["kind"],
            pose=Pose2D.from_list(d["pose"]),
            speed=float(d["speed"]),
            yaw_rate=float(d["yaw_rate"]),
            half_length=float(d["half_length"]),
            half_width=float(d["half_width"]),
        )


@dataclass(frozen=True)
class Scenario:
    """A simulated scene: static rectangles, moving agents, and the ego."""

    static_obstacles: tuple
    agents: tuple
    ego: Agent
    duration: float = 3.5
    dt: float = DEFAULT_DT
    rng_seed: int = 0
    n_rays: int = DEFAULT_N_RAYS
    max_range: float = DEFAULT_MAX_RANGE
    noise_sigma: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "static_obstacles", tuple(self.static_obstacles))
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.n_frames < MIN_FRAMES:
            raise ValueError(
                f"duration/dt gives {self.n_frames} frames, need >= {MIN_FRAMES}"
            )

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / self.dt))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "static_obstacles": [r.to_dict() for r in self.static_obstacles],
            "agents": [a.to_dict() for a in self.agents],
            "ego": self.ego.to_dict(),
            "duration": self.duration,
            "dt": self.dt,
            "rng_seed": self.rng_seed,
            "n_rays": self.n_rays,
            "max_range": self.max_range,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            static_obstacles=tuple(OrientedRect.from_dict(r) for r in d["static_obstacles"]),
            agents=tuple(Agent.from_dict(a) for a in d["agents"]),
            ego=Agent.from_dict(d["ego"]),
            duration=float(d["duration"]),
            dt=float(d["dt"]),
            rng_seed=int(d["rng_seed"]),
            n_rays=int(d.get("n_rays", DEFAULT_N_RAYS)),
            max_range=float(d.get("max_range", DEFAULT_MAX_RANGE)),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            name=d.get("name", "custom"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SensorFrame:
    """One 2D lidar sweep: per-ray range/bearing/hit plus the ego pose.

    Bearings are in the ego body frame; hit=False rays carry range=max_range.
    """

    t: int
    ego_pose: Pose2D
    ranges: np.ndarray
    bearings: np.ndarray
    hits: np.ndarray
    max_range: float = DEFAULT_MAX_RANGE

    def validate(self) -> None:
        if np.any(self.ranges <= 0) or np.any(self.ranges > self.max_range + 1e-9):
            raise ValueError("ray ranges must lie in (0, max_range]")
        if np.any(~self.hits & (np.abs(self.ranges - self.max_range) > 1e-9)):
            raise ValueError("miss rays must carry range == max_range")


def step_scenario(scenario: Scenario, t: int) -> dict:
    """Agent and ego poses at frame t. Raises on out-of-range frame index."""
    if t < 0 or t >= scenario.n_frames:
        raise IndexError(f"frame {t} outside [0, {scenario.n_frames})")
    return {
        "ego": scenario.ego.pose_at(t, scenario.dt),
        "agents": {a.id: a.pose_at(t, scenario.dt) for a in scenario.agents},
    }


def cast_rays(
    rects: list[OrientedRect],
    ego_pose: Pose2D,
    n_rays: int = DEFAULT_N_RAYS,
    max_range: float = DEFAULT_MAX_RANGE,
    t: int = 0,
    noise_sigma: float = 0.0,
    rng_seed: int = 0,
) -> SensorFrame:
    """Cast evenly spaced rays from the ego pose against rectangles.

    `rects` must already exclude the ego's own footprint. Ranges are exact
    slab-test intersections; optional Gaussian range noise is seeded by
    (rng_seed, t) so frames stay independently reproducible.
    """
    if n_rays < 1:
        raise ValueError("n_rays must be >= 1")
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    bearings = -math.pi + (2.0 * math.pi / n_rays) * np.arange(n_rays)
    world_angles = bearings + ego_pose.theta
    directions = np.stack([np.cos(world_angles), np.sin(world_angles)], axis=1)
    ranges = ray_rect_distances(ego_pose.xy, directions, rects, max_range)
    hits = ranges < max_range - 1e-12
    if noise_sigma > 0.0:
        rng = np.random.default_rng([rng_seed, t])
        noisy = ranges + np.where(hits, rng.normal(0.0, noise_sigma, n_rays), 0.0)
        ranges = np.clip(noisy, 1e-6, max_range)
    return SensorFrame(
        t=t,
        ego_pose=ego_pose,
        ranges=ranges,
        bearings=bearings,
        hits=hits,
        max_range=max_range,
    )


def scene_rects(scenario: Scenario, t: int) -> list[OrientedRect]:
    """All rectangles visible to the lidar at frame t (ego excluded)."""
    state = step_scenario(scenario, t)
    rects = list(scenario.static_obstacles)
    for a in scenario.agents:
        rects.append(OrientedRect(state["agents"][a.id], a.half_length, a.half_width))
    return rects


def run_scenario(scenario: Scenario) -> list[SensorFrame]:
    """Simulate the full scenario into a sensor log, one frame per step."""
    frames = []
    for t in range(scenario.n_frames):
        ego_pose = scenario.ego.pose_at(t, scenario.dt)
        frames.append(
            cast_rays(
                scene_rects(scenario, t),
                ego_pose,
                n_rays=scenario.n_rays,
                max_range=scenario.max_range,
                t=t,
                noise_sigma=scenario.noise_sigma,
                rng_seed=scenario.rng_seed,
            )
        )
    return frames


def write_sensor_log(frames: list[SensorFrame], path) -> None:
    with open(path, "w") as f:
        for fr in frames:
            rec = {
                "t": fr.t,
                "ego_pose": fr.ego_pose.to_list(),
                "max_range": fr.max_range,
                "rays": [
                    [float(r), float(b), bool(h)]
                    for r, b, h in zip(fr.ranges, fr.bearings, fr.hits)
                ],
            }
            f.write(json.dumps(rec) + "\n")


def read_sensor_log(path) -> list[SensorFrame]:
    frames = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"malformed sensor log line: {e}") from e
            rays = np.asarray(rec["rays"], dtype=float)
            frames.append(
                SensorFrame(
                    t=int(rec["t"]),
                    ego_pose=Pose2D.from_list(rec["ego_pose"]),
                    ranges=rays[:, 0],
                    bearings=rays[:, 1],
                    hits=rays[:, 2] > 0.5,
                    max_range=float(rec.get("max_range", DEFAULT_MAX_RANGE)),
                )
            )
    return frames
