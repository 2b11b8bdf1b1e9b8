"""Four-state occupancy grids: storage, frame transforms, resampling, file IO.

Each cell carries probabilities of being occupied-static, occupied-dynamic,
free, or unknown; the four always sum to one. Grids live in arbitrary world
poses: `origin` is the world pose of the corner of cell (0, 0), with grid
columns along the origin's +x axis and rows along +y. Per-cell velocities are
world-frame meters/second and only meaningful where dynamic mass dominates.

Snapshot files are binary: an ASCII magic, little-endian header (dims,
resolution, origin pose) and row-major cells as four 16-bit fixed-point
probabilities (probability = value / 65535). Velocities are not serialized.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import Pose2D

STATIC, DYNAMIC, FREE, UNKNOWN = 0, 1, 2, 3
UNKNOWN_STATE = np.array([0.0, 0.0, 0.0, 1.0])
FREE_STATE = np.array([0.0, 0.0, 1.0, 0.0])

_SNAPSHOT_MAGIC = b"DOGM"
_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class CellState:
    """One cell's four-state distribution."""

    p_static: float
    p_dynamic: float
    p_free: float
    p_unknown: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_static, self.p_dynamic, self.p_free, self.p_unknown])

    def validate(self, tol: float = 1e-6) -> None:
        a = self.as_array()
        if np.any(a < -tol) or np.any(a > 1 + tol):
            raise ValueError(f"state probabilities outside [0,1]: {a}")
        if abs(a.sum() - 1.0) > tol:
            raise ValueError(f"state probabilities sum to {a.sum()}, not 1")


def normalize_cells(cells: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Renormalize (..., 4) states in place; near-zero mass becomes unknown."""
    s = cells.sum(axis=-1)
    dead = s < eps
    if np.any(dead):
        cells[dead] = UNKNOWN_STATE
        s = np.where(dead, 1.0, s)
    cells /= s[..., None]
    return cells


@dataclass
class OccGrid:
    """W x H four-state occupancy grid with a world-frame pose."""

    width_cells: int
    height_cells: int
    resolution: float
    origin: Pose2D
    cells: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)

    @property
    def extent(self) -> tuple[float, float]:
        return self.width_cells * self.resolution, self.height_cells * self.resolution

    def copy(self) -> "OccGrid":
        return OccGrid(
            self.width_cells,
            self.height_cells,
            self.resolution,
            self.origin,
            self.cells.copy(),
            self.velocities.copy(),
        )

    def cell(self, row: int, col: int) -> CellState:
        c = self.cells[row, col]
        return CellState(c[STATIC], c[DYNAMIC], c[FREE], c[UNKNOWN])

    # -- coordinate transforms -------------------------------------------

    def world_to_grid(self, pts: np.ndarray) -> np.ndarray:
        """World (N, 2) points -> continuous (col, row) in cell units."""
        return self.origin.inverse_transform_points(pts) / self.resolution

    def grid_to_world(self, colrow: np.ndarray) -> np.ndarray:
        return self.origin.transform_points(np.asarray(colrow, dtype=float) * self.resolution)

    def cell_index(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> integer (rows, cols); may fall outside the grid."""
        cr = self.world_to_grid(pts)
        return np.floor(cr[..., 1]).astype(np.int64), np.floor(cr[..., 0]).astype(np.int64)

    def in_bounds(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return (rows >= 0) & (rows < self.height_cells) & (cols >= 0) & (cols < self.width_cells)

    def contains_world_points(self, pts: np.ndarray) -> np.ndarray:
        rows, cols = self.cell_index(np.atleast_2d(pts))
        return self.in_bounds(rows, cols)

    def cell_centers_world(self) -> np.ndarray:
        """(H, W, 2) world coordinates of all cell centers."""
        cols, rows = np.meshgrid(
            np.arange(self.width_cells) + 0.5, np.arange(self.height_cells) + 0.5
        )
        pts = np.stack([cols, rows], axis=-1)
        return self.origin.transform_points(pts * self.resolution)

    # -- sampling ----------------------------------------------------------

    def sample_states(self, pts: np.ndarray, method: str = "bilinear") -> np.ndarray:
        """Sample the four-state field at world points; outside -> unknown.

        Bilinear interpolates each state channel then renormalizes, which is
        exact at cell centers; nearest returns stored cells unmodified.
        """
        cr = self.world_to_grid(np.asarray(pts, dtype=float))
        idx_col = cr[..., 0] - 0.5
        idx_row = cr[..., 1] - 0.5
        order = {"bilinear": 1, "nearest": 0}[method]
        out = np.empty(cr.shape[:-1] + (4,))
        for ch in range(4):
            cval = 1.0 if ch == UNKNOWN else 0.0
            out[..., ch] = map_coordinates(
                self.cells[..., ch], [idx_row, idx_col], order=order, mode="constant", cval=cval
            )
        return normalize_cells(out)

    def validate(self, tol: float = 1e-6) -> None:
        if np.any(self.cells < -tol) or np.any(self.cells > 1 + tol):
            raise ValueError("cell probabilities outside [0,1]")
        err = np.abs(self.cells.sum(axis=-1) - 1.0)
        if err.max() > tol:
            raise ValueError(f"cell states sum deviates from 1 by up to {err.max():.2e}")


def init_grid(width_cells: int, height_cells: int, resolution: float, origin: Pose2D) -> OccGrid:
    """Fresh grid: every cell fully unknown, velocities zero."""
    if width_cells <= 0 or height_cells <= 0:
        raise ValueError("grid dimensions must be positive")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    cells = np.zeros((height_cells, width_cells, 4))
    cells[..., UNKNOWN] = 1.0
    return OccGrid(
        width_cells=width_cells,
        height_cells=height_cells,
        resolution=resolution,
        origin=origin,
        cells=cells,
        velocities=np.zeros((height_cells, width_cells, 2)),
    )


def resample_grid(
    src: OccGrid,
    origin: Pose2D,
    width_cells: int,
    height_cells: int,
    resolution: float | None = None,
    method: str = "bilinear",
) -> OccGrid:
    """Rigidly resample a grid into a new frame.

    Destination cells outside the source footprint become unknown. Velocities
    are transported as dynamic-mass-weighted momentum so interpolation does
    not smear speeds into empty cells.
    """
    resolution = src.resolution if resolution is None else resolution
    same_frame = (
        width_cells == src.width_cells
        and height_cells == src.height_cells
        and abs(resolution - src.resolution) < 1e-12
        and abs(origin.x - src.origin.x) < 1e-12
        and abs(origin.y - src.origin.y) < 1e-12
        and abs(origin.theta - src.origin.theta) < 1e-12
    )
    if same_frame:
        return src.copy()

    dst = init_grid(width_cells, height_cells, resolution, origin)
    matrix = affine_index_map(src.origin, src.resolution, origin, resolution)
    flags = (cv2.INTER_LINEAR if method == "bilinear" else cv2.INTER_NEAREST) | cv2.WARP_INVERSE_MAP
    dst.cells[:] = cv2.warpAffine(
        src.cells,
        matrix,
        (width_cells, height_cells),
        flags=flags,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(0.0, 0.0, 0.0, 1.0),
    )
    normalize_cells(dst.cells)

    dyn = src.cells[..., DYNAMIC]
    if np.any(dyn > 1e-9):
        mom = np.concatenate([src.velocities * dyn[..., None], dyn[..., None]], axis=-1)
        mom_s = cv2.warpAffine(
            mom,
            matrix,
            (width_cells, height_cells),
            flags=flags,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=(0.0, 0.0, 0.0, 0.0),
        )
        ok = mom_s[..., 2] > 1e-9
        if np.any(ok):
            dst.velocities[ok] = mom_s[..., :2][ok] / mom_s[..., 2][ok, None]
    return dst


def affine_index_map(
    src_origin: Pose2D, src_resolution: float, dst_origin: Pose2D, dst_resolution: float
) -> np.ndarray:
    """2x3 matrix mapping destination pixel indices to source pixel indices.

    Index space puts integer coordinates at cell centers (cv2 convention,
    x = column, y = row).
    """
    dth = dst_origin.theta - src_origin.theta
    scale = dst_resolution / src_resolution
    c, s = math.cos(dth) * scale, math.sin(dth) * scale
    a = np.array([[c, -s], [s, c]])
    d_local = src_origin.inverse_transform_points(np.array([[dst_origin.x, dst_origin.y]]))[0]
    b = d_local / src_resolution + a @ np.array([0.5, 0.5]) - np.array([0.5, 0.5])
    return np.array([[a[0, 0], a[0, 1], b[0]], [a[1, 0], a[1, 1], b[1]]])


# -- snapshot file format --------------------------------------------------


def write_snapshot(grid: OccGrid, path) -> None:
    header = struct.pack(
        "<4sHII4d",
        _SNAPSHOT_MAGIC,
        _SNAPSHOT_VERSION,
        grid.width_cells,
        grid.height_cells,
        grid.resolution,
        grid.origin.x,
        grid.origin.y,
        grid.origin.theta,
    )
    fixed = np.floor(np.clip(grid.cells, 0.0, 1.0) * 65535.0 + 0.5).astype("<u2")
    with open(path, "wb") as f:
        f.write(header)
        f.write(fixed.tobytes())


def read_snapshot(path) -> OccGrid:
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<4sHII4d")
    if len(raw) < head_size:
        raise ValueError(f"snapshot file too short: {path}")
    magic, version, w, h, res, x, y, theta = struct.unpack("<4sHII4d", raw[:head_size])
    if magic != _SNAPSHOT_MAGIC:
        raise ValueError(f"not a grid snapshot file: {path}")
    if version != _SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = np.frombuffer(raw[head_size:], dtype="<u2")
    if body.size != w * h * 4:
        raise ValueError(f"snapshot body has {body.size} values, expected {w * h * 4}")
    cells = body.reshape(h, w, 4).astype(float) / 65535.0
    grid = OccGrid(
        width_cells=w,
        height_cells=h,
        resolution=res,
        origin=Pose2D(x, y, theta),
        cells=cells,
        velocities=np.zeros((h, w, 2)),
    )
    normalize_cells(grid.cells)
    return grid
