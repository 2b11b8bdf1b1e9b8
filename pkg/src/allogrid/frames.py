"""World-fixed vs ego-fixed grid pipelines and the large-grid fusion step.

The world-fixed ("allo") frame is planned once from the ego's initial pose:
grid +y aligns with the initial heading, the ego projects to the lateral
center, 10 m from the rear edge. The plan never changes within a sequence.

The ego-fixed pipeline re-centers its grid every frame (ego at the grid
center, heading up) by rigidly resampling the previous posterior before the
scan update, so the whole scene moves through the grid as the ego drives.

Paper-style world-grid filtering runs through a much larger intermediate
grid updated from onboard scans and fused into the fixed grid each frame.
Here that large grid shares the fixed frame's orientation and follows the
ego by whole cells, which keeps the per-frame motion an exact array shift
and makes fusion sampling exact; a "direct" mode that updates the fixed
grid straight from world-frame scans exists for cross-checking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filtering import FilterParams, FilterPipeline
from .geometry import OrientedRect, Pose2D
from .grid import UNKNOWN, OccGrid, init_grid, normalize_cells, resample_grid
from .gridimage import GridImage, encode, to_u8_precision
from .scene import SensorFrame

ALLO_EXTENT = 60.0
RESOLUTION = 0.1
MARGIN_BEHIND = 10.0
MARGIN_AHEAD = 50.0
BIG_EGO_EXTENT = 140.0


@dataclass(frozen=True)
class FramePlan:
    """Immutable geometry of one sequence's world-fixed grid."""

    allo_origin: Pose2D
    extent: float = ALLO_EXTENT
    resolution: float = RESOLUTION
    margin_behind: float = MARGIN_BEHIND
    margin_ahead: float = MARGIN_AHEAD
    big_ego_extent: float = BIG_EGO_EXTENT

    def __post_init__(self):
        if abs(self.margin_behind + self.margin_ahead - self.extent) > 1e-9:
            raise ValueError("margins must sum to the along-heading extent")

    @property
    def cells(self) -> int:
        return int(round(self.extent / self.resolution))

    @property
    def big_cells(self) -> int:
        return int(round(self.big_ego_extent / self.resolution))

    def to_dict(self) -> dict:
        return {
            "allo_origin": self.allo_origin.to_list(),
            "extent": self.extent,
            "resolution": self.resolution,
            "margin_behind": self.margin_behind,
            "margin_ahead": self.margin_ahead,
            "big_ego_extent": self.big_ego_extent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FramePlan":
        return cls(
            allo_origin=Pose2D.from_list(d["allo_origin"]),
            extent=float(d["extent"]),
            resolution=float(d["resolution"]),
            margin_behind=float(d["margin_behind"]),
            margin_ahead=float(d["margin_ahead"]),
            big_ego_extent=float(d["big_ego_extent"]),
        )


def _heading_axes(theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Grid-frame axes for a grid whose +y aligns with heading `theta`."""
    ex = np.array([math.sin(theta), -math.cos(theta)])  # lateral, to the right
    ey = np.array([math.cos(theta), math.sin(theta)])   # along heading
    return ex, ey


def plan_allo_frame(
    ego_pose_0: Pose2D,
    extent: float = ALLO_EXTENT,
    resolution: float = RESOLUTION,
    margin_behind: float = MARGIN_BEHIND,
    big_ego_extent: float = BIG_EGO_EXTENT,
) -> FramePlan:
    """Fix the world grid off the initial ego pose.

    Grid +y runs along the initial heading; the ego starts at the lateral
    center, `margin_behind` meters from the rear edge.
    """
    ex, ey = _heading_axes(ego_pose_0.theta)
    origin_xy = ego_pose_0.xy - (extent / 2.0) * ex - margin_behind * ey
    return FramePlan(
        allo_origin=Pose2D(origin_xy[0], origin_xy[1], ego_pose_0.theta - math.pi / 2.0),
        extent=extent,
        resolution=resolution,
        margin_behind=margin_behind,
        margin_ahead=extent - margin_behind,
        big_ego_extent=big_ego_extent,
    )


def ego_centered_origin(ego_pose: Pose2D, extent: float) -> Pose2D:
    """Origin placing the ego at the grid center with heading up."""
    ex, ey = _heading_axes(ego_pose.theta)
    origin_xy = ego_pose.xy - (extent / 2.0) * (ex + ey)
    return Pose2D(origin_xy[0], origin_xy[1], ego_pose.theta - math.pi / 2.0)


@dataclass
class PipelineRun:
    """Per-frame products of one filtering pipeline."""

    images: list = field(default_factory=list)          # GridImage per frame
    observed: list = field(default_factory=list)        # bool (H, W) image coords
    origins: list = field(default_factory=list)         # grid origin per frame
    ego_poses: list = field(default_factory=list)
    extent: float = ALLO_EXTENT
    resolution: float = RESOLUTION
    final_grid: OccGrid | None = None


def _emit(run: PipelineRun, grid: OccGrid, frame: SensorFrame, precision: str) -> None:
    img = encode(grid, t=frame.t)
    if precision == "u8":
        img = to_u8_precision(img)
    run.images.append(img)
    run.observed.append(img.data[..., 0] < 0.5)  # R channel below evidence threshold
    run.origins.append(grid.origin)
    run.ego_poses.append(frame.ego_pose)


def _ego_rect(pose: Pose2D, half_extents) -> OrientedRect | None:
    if half_extents is None:
        return None
    return OrientedRect(pose, half_extents[0], half_extents[1])


def run_ego_pipeline(
    log: list[SensorFrame],
    extent: float = ALLO_EXTENT,
    resolution: float = RESOLUTION,
    params: FilterParams | None = None,
    ego_half_extents: tuple | None = (2.2, 0.9),
    precision: str = "u8",
    method: str = "bilinear",
    dt: float = 0.1,
    inspect=None,
) -> PipelineRun:
    """Ego-fixed filtering: re-center, predict, update, mask own footprint."""
    params = params or FilterParams()
    cells = int(round(extent / resolution))
    run = PipelineRun(extent=extent, resolution=resolution)
    pipe: FilterPipeline | None = None
    for frame in log:
        origin = ego_centered_origin(frame.ego_pose, extent)
        if pipe is None:
            grid = init_grid(cells, cells, resolution, origin)
            pipe = FilterPipeline(grid, params, dt=dt, ego_mode="free", inspect=inspect)
        else:
            pipe.grid = resample_grid(pipe.grid, origin, cells, cells, resolution, method)
            if inspect is not None:
                inspect("recenter", pipe.grid)
        pipe.step(frame, _ego_rect(frame.ego_pose, ego_half_extents))
        _emit(run, pipe.grid, frame, precision)
    if pipe is not None:
        run.final_grid = pipe.grid
    return run


def fuse_ego_to_allo(big: OccGrid, allo: OccGrid, inplace: bool = False) -> OccGrid:
    """Blend large-grid states into the fixed grid.

    Each fixed-grid cell samples the large grid at its world point (exact
    slice when the grids are axis-aligned at whole-cell offsets, bilinear
    otherwise) and blends with weight w = 1 - p_unknown(sample), so unknown
    samples leave the cell untouched and confident samples replace it.
    """
    corners_local = big.world_to_grid(
        allo.grid_to_world(
            np.array(
                [
                    [0.0, 0.0],
                    [allo.width_cells, 0.0],
                    [0.0, allo.height_cells],
                    [allo.width_cells, allo.height_cells],
                ]
            )
        )
    )
    if (
        corners_local.min() < -1e-6
        or corners_local[:, 0].max() > big.width_cells + 1e-6
        or corners_local[:, 1].max() > big.height_cells + 1e-6
    ):
        raise ValueError(
            "large grid does not cover the fixed grid: fixed-grid corners map to "
            f"cells {np.round(corners_local, 2).tolist()} in a "
            f"{big.width_cells}x{big.height_cells} grid"
        )

    out = allo if inplace else allo.copy()
    sample = _sample_aligned_or_bilinear(big, out)
    w = 1.0 - sample[..., UNKNOWN]
    out.cells *= (1.0 - w)[..., None]
    out.cells += w[..., None] * sample
    normalize_cells(out.cells)
    return out


def _sample_aligned_or_bilinear(big: OccGrid, allo: OccGrid) -> np.ndarray:
    same_axes = (
        abs(big.origin.theta - allo.origin.theta) < 1e-12
        and abs(big.resolution - allo.resolution) < 1e-12
    )
    if same_axes:
        delta = big.origin.inverse_transform_points(
            np.array([[allo.origin.x, allo.origin.y]])
        )[0] / big.resolution
        off = np.round(delta).astype(np.int64)
        if np.max(np.abs(delta - off)) < 1e-9:
            dc, dr = off
            return big.cells[dr : dr + allo.height_cells, dc : dc + allo.width_cells].copy()
    return big.sample_states(allo.cell_centers_world(), method="bilinear")


def _shift_grid_to(grid: OccGrid, new_origin: Pose2D) -> OccGrid:
    """Move an axis-aligned grid to a new origin a whole number of cells away."""
    delta = grid.origin.inverse_transform_points(np.array([[new_origin.x, new_origin.y]]))[0]
    off = delta / grid.resolution
    off_int = np.round(off).astype(np.int64)
    if np.max(np.abs(off - off_int)) > 1e-9:
        raise ValueError("shift must be a whole number of cells")
    dc, dr = off_int
    if dc == 0 and dr == 0:
        return grid
    out = init_grid(grid.width_cells, grid.height_cells, grid.resolution, new_origin)
    h, w = grid.height_cells, grid.width_cells
    r0, r1 = max(0, dr), min(h, dr + h)
    c0, c1 = max(0, dc), min(w, dc + w)
    if r0 < r1 and c0 < c1:
        out.cells[r0 - dr : r1 - dr, c0 - dc : c1 - dc] = grid.cells[r0:r1, c0:c1]
        out.velocities[r0 - dr : r1 - dr, c0 - dc : c1 - dc] = grid.velocities[r0:r1, c0:c1]
    return out


BIG_GRID_RECENTER_M = 5.0  # re-snap the large grid once the ego drifts this far


def _snapped_big_origin(plan: FramePlan, ego_pose: Pose2D, prev: Pose2D | None = None) -> Pose2D:
    """Large-grid origin: fixed-frame axes, ego centered to the cell.

    With a previous origin given, the grid only re-snaps once the ego has
    drifted more than BIG_GRID_RECENTER_M from that origin's center; the
    margins of the large grid dwarf per-frame ego motion, so following the
    ego by whole cells every frame would buy nothing but copies.
    """
    local = plan.allo_origin.inverse_transform_points(ego_pose.xy[None, :])[0]
    corner = local - plan.big_ego_extent / 2.0
    if prev is not None:
        prev_local = plan.allo_origin.inverse_transform_points(
            np.array([[prev.x, prev.y]])
        )[0]
        if np.max(np.abs(corner - prev_local)) < BIG_GRID_RECENTER_M:
            return prev
    snapped = np.round(corner / plan.resolution) * plan.resolution
    xy = plan.allo_origin.transform_points(snapped[None, :])[0]
    return Pose2D(xy[0], xy[1], plan.allo_origin.theta)


def run_allo_pipeline(
    log: list[SensorFrame],
    plan: FramePlan,
    mode: str = "fuse",
    params: FilterParams | None = None,
    ego_half_extents: tuple | None = (2.2, 0.9),
    precision: str = "u8",
    dt: float = 0.1,
    inspect=None,
) -> PipelineRun:
    """World-fixed filtering, either through the large fused grid or direct."""
    if mode not in ("fuse", "direct"):
        raise ValueError(f"unknown allo mode {mode!r}")
    params = params or FilterParams()
    n = plan.cells
    allo = init_grid(n, n, plan.resolution, plan.allo_origin)
    run = PipelineRun(extent=plan.extent, resolution=plan.resolution)

    if mode == "direct":
        pipe = FilterPipeline(allo, params, dt=dt, ego_mode="occupied", inspect=inspect)
        for frame in log:
            pipe.step(frame, _ego_rect(frame.ego_pose, ego_half_extents))
            _emit(run, pipe.grid, frame, precision)
        run.final_grid = pipe.grid
        return run

    big_pipe: FilterPipeline | None = None
    for frame in log:
        if big_pipe is None:
            origin = _snapped_big_origin(plan, frame.ego_pose)
            big = init_grid(plan.big_cells, plan.big_cells, plan.resolution, origin)
            big_pipe = FilterPipeline(big, params, dt=dt, ego_mode="occupied", inspect=inspect)
        else:
            origin = _snapped_big_origin(plan, frame.ego_pose, prev=big_pipe.grid.origin)
            if origin is not big_pipe.grid.origin:
                big_pipe.grid = _shift_grid_to(big_pipe.grid, origin)
        big_pipe.step(frame, _ego_rect(frame.ego_pose, ego_half_extents))
        allo = fuse_ego_to_allo(big_pipe.grid, allo, inplace=True)
        if inspect is not None:
            inspect("fuse", allo)
        _emit(run, allo, frame, precision)
    run.final_grid = allo
    return run


@dataclass
class PairedRun:
    """Both pipelines run on one scenario's sensor log."""

    plan: FramePlan
    allo: PipelineRun
    ego: PipelineRun
    ego_poses: list
    dt: float = 0.1


def run_paired_scenario(
    scenario,
    params: FilterParams | None = None,
    mode: str = "fuse",
    precision: str = "u8",
    log: list[SensorFrame] | None = None,
    plan: FramePlan | None = None,
    inspect=None,
) -> PairedRun:
    """Run the world-fixed and ego-fixed pipelines on the same sensor log."""
    from .scene import run_scenario

    log = run_scenario(scenario) if log is None else log
    plan = plan_allo_frame(log[0].ego_pose) if plan is None else plan
    half = (scenario.ego.half_length, scenario.ego.half_width)
    allo = run_allo_pipeline(
        log, plan, mode=mode, params=params, ego_half_extents=half,
        precision=precision, dt=scenario.dt, inspect=inspect,
    )
    ego = run_ego_pipeline(
        log, extent=plan.extent, resolution=plan.resolution, params=params,
        ego_half_extents=half, precision=precision, dt=scenario.dt, inspect=inspect,
    )
    return PairedRun(plan=plan, allo=allo, ego=ego, ego_poses=[f.ego_pose for f in log], dt=scenario.dt)
