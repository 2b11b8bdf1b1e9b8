"""Four-state occupancy filtering from 2D lidar scans.

The filter keeps the classic predict/update split. Prediction leaks every
cell toward unknown at rate gamma and advects dynamic mass along per-cell
velocities with bilinear splatting. The update converts each ray into
evidence: cells strictly before a hit are blended toward free, the hit cell
toward occupied, and misses free the whole ray. Occupied mass is allocated
between static and dynamic by patch correlation against the occupancy field
of `corr_lag` frames ago; until that history exists, occupied evidence uses a
fixed static-leaning split.

Evidence is applied at most once per cell per frame: overlapping rays (which
are dense near the sensor) contribute a single free or occupied blend, with
occupied taking precedence where both apply.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import cv2
import numpy as np

from .correlation import zncc_displacement_search
from .geometry import OrientedRect, Pose2D
from .grid import (
    DYNAMIC,
    FREE,
    STATIC,
    UNKNOWN,
    FREE_STATE,
    OccGrid,
    affine_index_map,
    normalize_cells,
)

OCCUPIED_STATIC = np.array([1.0, 0.0, 0.0, 0.0])
OCCUPIED_DYNAMIC = np.array([0.0, 1.0, 0.0, 0.0])


@dataclass(frozen=True)
class FilterParams:
    """Evidence blending and motion-classification settings."""

    lambda_occ: float = 0.7
    lambda_free: float = 0.4
    gamma_decay: float = 0.02
    v_min: float = 0.5
    corr_window: int = 5
    corr_lag: int = 3
    search_radius: int = 8
    peak_threshold: float = 0.5
    # a nonzero displacement must beat the zero-displacement score by this
    # much; guards static elongated structure against the aperture problem
    peak_margin: float = 0.05
    unknown_split: tuple = (0.7, 0.3)  # static/dynamic shares before classification

    def __post_init__(self):
        if not (0.0 < self.lambda_occ < 1.0 and 0.0 < self.lambda_free < 1.0):
            raise ValueError("lambda_occ and lambda_free must lie in (0, 1)")
        if not (0.0 <= self.gamma_decay < 1.0):
            raise ValueError("gamma_decay must lie in [0, 1)")
        if self.v_min < 0:
            raise ValueError("v_min must be >= 0")
        if self.corr_window < 1 or self.corr_lag < 1 or self.search_radius < 1:
            raise ValueError("correlation window/lag/radius must be >= 1")
        if abs(sum(self.unknown_split) - 1.0) > 1e-9:
            raise ValueError("unknown_split must sum to 1")


def predict_step(grid: OccGrid, params: FilterParams, dt: float = 0.1, inplace: bool = False) -> OccGrid:
    """Inter-frame transition: decay toward unknown, advect dynamic mass."""
    out = grid if inplace else grid.copy()
    g = params.gamma_decay
    if g > 0.0:
        out.cells *= 1.0 - g
        out.cells[..., UNKNOWN] += g

    dyn = out.cells[..., DYNAMIC]
    src_r, src_c = np.nonzero(dyn > 1e-9)
    if len(src_r):
        v = out.velocities[src_r, src_c]
        if np.max(np.abs(v)) > 1e-12:
            c, s = math.cos(out.origin.theta), math.sin(out.origin.theta)
            dcol = (c * v[:, 0] + s * v[:, 1]) * dt / out.resolution
            drow = (-s * v[:, 0] + c * v[:, 1]) * dt / out.resolution
            mass = dyn[src_r, src_c]
            tgt_r = src_r + drow
            tgt_c = src_c + dcol
            r0 = np.floor(tgt_r).astype(np.int64)
            c0 = np.floor(tgt_c).astype(np.int64)
            fr = tgt_r - r0
            fc = tgt_c - c0

            new_dyn = np.zeros_like(dyn)
            mom = np.zeros(out.velocities.shape)
            h, w = dyn.shape
            touched = [src_r * w + src_c]
            for rr, cc, wt in (
                (r0, c0, (1 - fr) * (1 - fc)),
                (r0, c0 + 1, (1 - fr) * fc),
                (r0 + 1, c0, fr * (1 - fc)),
                (r0 + 1, c0 + 1, fr * fc),
            ):
                ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w) & (wt > 0)
                if np.any(ok):
                    np.add.at(new_dyn, (rr[ok], cc[ok]), mass[ok] * wt[ok])
                    np.add.at(mom, (rr[ok], cc[ok], np.zeros(ok.sum(), np.int64)),
                              mass[ok] * wt[ok] * v[ok, 0])
                    np.add.at(mom, (rr[ok], cc[ok], np.ones(ok.sum(), np.int64)),
                              mass[ok] * wt[ok] * v[ok, 1])
                    touched.append(rr[ok] * w + cc[ok])

            out.cells[..., DYNAMIC] = new_dyn
            out.velocities[:] = 0.0
            carrier = new_dyn > 1e-9
            out.velocities[carrier] = mom[carrier] / new_dyn[carrier, None]
            lin = np.unique(np.concatenate(touched))
            flat = out.cells.reshape(-1, 4)
            flat[lin] = normalize_cells(flat[lin])
    return out


def visible_cells_of_rect(grid: OccGrid, rect: OrientedRect) -> tuple[np.ndarray, np.ndarray]:
    """Integer (rows, cols) of grid cells whose centers lie inside a rectangle."""
    corners = grid.world_to_grid(rect.corners())
    c_lo = max(int(np.floor(corners[:, 0].min())) - 1, 0)
    c_hi = min(int(np.ceil(corners[:, 0].max())) + 1, grid.width_cells - 1)
    r_lo = max(int(np.floor(corners[:, 1].min())) - 1, 0)
    r_hi = min(int(np.ceil(corners[:, 1].max())) + 1, grid.height_cells - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    cols, rows = np.meshgrid(np.arange(c_lo, c_hi + 1), np.arange(r_lo, r_hi + 1))
    centers = grid.grid_to_world(np.stack([cols + 0.5, rows + 0.5], axis=-1))
    inside = rect.contains_points(centers)
    return rows[inside].astype(np.int64), cols[inside].astype(np.int64)


def classify_motion(
    snapshots,
    cell: tuple[int, int],
    params: FilterParams,
    resolution: float,
    dt: float = 0.1,
) -> tuple[bool, tuple[float, float]]:
    """Classify one cell as dynamic/static from past occupancy snapshots.

    `snapshots` holds combined-occupancy arrays (static + dynamic mass),
    oldest first, all expressed in the current grid frame; the last entry is
    the current frame. With fewer than corr_lag + 1 arrays the cell is static
    with zero velocity. The returned velocity is in grid-axis meters/second.
    """
    snapshots = list(snapshots)
    if len(snapshots) < params.corr_lag + 1:
        return False, (0.0, 0.0)
    ref = snapshots[-1 - params.corr_lag]
    cur = snapshots[-1]
    row, col = cell
    dx, dy, peak, peak0 = zncc_displacement_search(
        ref, cur, np.array([row]), np.array([col]), params.corr_window, params.search_radius
    )
    scale = resolution / (params.corr_lag * dt)
    vx, vy = dx[0] * scale, dy[0] * scale
    is_dyn = bool(
        math.hypot(vx, vy) > params.v_min
        and peak[0] > params.peak_threshold
        and peak[0] - peak0[0] > params.peak_margin
    )
    if not is_dyn:
        return False, (0.0, 0.0)
    return True, (vx, vy)


def _ray_world_geometry(grid: OccGrid, frame) -> tuple[np.ndarray, np.ndarray]:
    angles = frame.bearings + frame.ego_pose.theta
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return frame.ego_pose.xy, dirs


def update_from_scan(
    grid: OccGrid,
    frame,
    params: FilterParams,
    ref_occupancy: np.ndarray | None = None,
    ego_rect: OrientedRect | None = None,
    ego_mode: str = "none",
    ego_velocity: tuple | None = None,
    dt: float = 0.1,
    inplace: bool = False,
) -> OccGrid:
    """Apply one scan's evidence to the grid.

    `ref_occupancy` is the combined occupancy of corr_lag frames ago warped
    into this grid's frame (None while that history does not exist yet).
    `ego_mode` controls how the ego body is written into the grid:
    "occupied" renders the footprint as occupied evidence (and shields it
    from its own rays' free evidence), "free" hard-masks it to known free
    space, "none" leaves it to the rays alone. Rendered footprint cells use
    `ego_velocity` (world m/s, known from odometry) instead of patch
    correlation to split their occupied mass.
    """
    if not grid.contains_world_points(frame.ego_pose.xy[None, :])[0]:
        raise ValueError("ego pose lies outside the grid extent")
    out = grid if inplace else grid.copy()
    h, w = out.height_cells, out.width_cells
    origin_xy, dirs = _ray_world_geometry(out, frame)

    # sample points along every ray, strictly before the hit distance
    step = 0.45 * out.resolution
    counts = (frame.ranges / step).astype(np.int64)
    ray_id = np.repeat(np.arange(len(frame.ranges)), counts)
    dists = (np.concatenate([np.arange(c) for c in counts]) + 0.5) * step
    pts = origin_xy[None, :] + dists[:, None] * dirs[ray_id]
    rows, cols = out.cell_index(pts)
    ok = out.in_bounds(rows, cols)
    traversed = np.unique(rows[ok] * w + cols[ok])

    # hit cells: just past the measured boundary along each hitting ray
    hit_lin = np.empty(0, dtype=np.int64)
    if np.any(frame.hits):
        hpts = (
            origin_xy[None, :]
            + (frame.ranges[frame.hits, None] + 1e-3 * out.resolution) * dirs[frame.hits]
        )
        hr, hc = out.cell_index(hpts)
        okh = out.in_bounds(hr, hc)
        hit_lin = np.unique(hr[okh] * w + hc[okh])

    foot_lin = np.empty(0, dtype=np.int64)
    if ego_rect is not None and ego_mode == "occupied":
        fr_, fc_ = visible_cells_of_rect(out, ego_rect)
        foot_lin = fr_ * w + fc_
        hit_lin = np.union1d(hit_lin, foot_lin)

    free_lin = np.setdiff1d(traversed, hit_lin, assume_unique=False)

    flat = out.cells.reshape(-1, 4)
    if len(free_lin):
        lf = params.lambda_free
        blended = (1.0 - lf) * flat[free_lin] + lf * FREE_STATE
        flat[free_lin] = normalize_cells(blended)
        # freed cells keep no velocity; remaining dynamic mass is negligible
        out.velocities.reshape(-1, 2)[free_lin] = 0.0

    if len(hit_lin):
        m = np.empty((len(hit_lin), 4))
        v_world = np.zeros((len(hit_lin), 2))
        split = np.array([params.unknown_split[0], params.unknown_split[1], 0.0, 0.0])
        is_foot = np.isin(hit_lin, foot_lin, assume_unique=True) if len(foot_lin) else \
            np.zeros(len(hit_lin), dtype=bool)

        ray_idx = np.nonzero(~is_foot)[0]
        if len(ray_idx):
            if ref_occupancy is None:
                m[ray_idx] = split
            else:
                occ_r = hit_lin[ray_idx] // w
                occ_c = hit_lin[ray_idx] % w
                cur_occ = out.cells[..., STATIC] + out.cells[..., DYNAMIC]
                dx, dy, peak, peak0 = zncc_displacement_search(
                    ref_occupancy, cur_occ, occ_r, occ_c,
                    params.corr_window, params.search_radius,
                )
                scale = out.resolution / (params.corr_lag * dt)
                c, s = math.cos(out.origin.theta), math.sin(out.origin.theta)
                vx_l = dx * scale
                vy_l = dy * scale
                speed = np.hypot(vx_l, vy_l)
                dyn = (
                    (speed > params.v_min)
                    & (peak > params.peak_threshold)
                    & (peak - peak0 > params.peak_margin)
                )
                m[ray_idx] = OCCUPIED_STATIC
                m[ray_idx[dyn]] = OCCUPIED_DYNAMIC
                v_world[ray_idx[dyn], 0] = c * vx_l[dyn] - s * vy_l[dyn]
                v_world[ray_idx[dyn], 1] = s * vx_l[dyn] + c * vy_l[dyn]

        foot_idx = np.nonzero(is_foot)[0]
        if len(foot_idx):
            if ego_velocity is None:
                m[foot_idx] = split
            elif math.hypot(*ego_velocity) > params.v_min:
                m[foot_idx] = OCCUPIED_DYNAMIC
                v_world[foot_idx] = ego_velocity
            else:
                m[foot_idx] = OCCUPIED_STATIC

        lo = params.lambda_occ
        blended = (1.0 - lo) * flat[hit_lin] + lo * m
        flat[hit_lin] = normalize_cells(blended)
        out.velocities.reshape(-1, 2)[hit_lin] = v_world

    if ego_rect is not None and ego_mode == "free":
        fr_, fc_ = visible_cells_of_rect(out, ego_rect)
        out.cells[fr_, fc_] = FREE_STATE
        out.velocities[fr_, fc_] = 0.0
    return out


def warp_occupancy(
    occ: np.ndarray, src_origin: Pose2D, src_resolution: float, dst: OccGrid
) -> np.ndarray:
    """Express a stored occupancy array in another grid's frame.

    Integer-cell translations between identically oriented grids are handled
    by pure slicing (exact); anything else falls back to bilinear sampling
    with zero fill.
    """
    same_axes = (
        abs(src_origin.theta - dst.origin.theta) < 1e-12
        and abs(src_resolution - dst.resolution) < 1e-12
    )
    if same_axes:
        delta = src_origin.inverse_transform_points(np.array([[dst.origin.x, dst.origin.y]]))[0]
        off = delta / src_resolution
        off_int = np.round(off).astype(np.int64)
        if np.max(np.abs(off - off_int)) < 1e-9:
            dc, dr = off_int  # dst cell (0,0) sits at src cell (dr, dc)
            out = np.zeros((dst.height_cells, dst.width_cells))
            src_h, src_w = occ.shape
            r0, r1 = max(0, dr), min(src_h, dr + dst.height_cells)
            c0, c1 = max(0, dc), min(src_w, dc + dst.width_cells)
            if r0 < r1 and c0 < c1:
                out[r0 - dr : r1 - dr, c0 - dc : c1 - dc] = occ[r0:r1, c0:c1]
            return out
    matrix = affine_index_map(src_origin, src_resolution, dst.origin, dst.resolution)
    return cv2.warpAffine(
        occ,
        matrix,
        (dst.width_cells, dst.height_cells),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0.0,
    )


@dataclass
class FilterPipeline:
    """Stateful per-frame filter runner for one grid.

    The caller may swap `grid` between frames (re-centering policies live in
    the frame pipelines); stored occupancy snapshots remember their own frame
    and are warped into the current one when the classifier needs them.
    """

    grid: OccGrid
    params: FilterParams
    dt: float = 0.1
    ego_mode: str = "none"
    inspect: object = None  # callable(stage, grid) or None
    _snapshots: deque = field(default_factory=deque, repr=False)
    _last_ego_pose: Pose2D | None = None

    def _ref_occupancy(self) -> np.ndarray | None:
        if len(self._snapshots) < self.params.corr_lag:
            return None
        occ, origin, res = self._snapshots[0]
        return warp_occupancy(occ, origin, res, self.grid)

    def _ego_velocity(self, pose: Pose2D) -> tuple | None:
        prev = self._last_ego_pose
        self._last_ego_pose = pose
        if prev is None:
            return None
        return ((pose.x - prev.x) / self.dt, (pose.y - prev.y) / self.dt)

    def step(self, frame, ego_rect: OrientedRect | None = None) -> OccGrid:
        self.grid = predict_step(self.grid, self.params, self.dt, inplace=True)
        if self.inspect is not None:
            self.inspect("predict", self.grid)
        self.grid = update_from_scan(
            self.grid,
            frame,
            self.params,
            ref_occupancy=self._ref_occupancy(),
            ego_rect=ego_rect,
            ego_mode=self.ego_mode,
            ego_velocity=self._ego_velocity(frame.ego_pose),
            dt=self.dt,
            inplace=True,
        )
        if self.inspect is not None:
            self.inspect("update", self.grid)
        occ = self.grid.cells[..., STATIC] + self.grid.cells[..., DYNAMIC]
        self._snapshots.append((occ, self.grid.origin, self.grid.resolution))
        while len(self._snapshots) > self.params.corr_lag:
            self._snapshots.popleft()
        return self.grid
