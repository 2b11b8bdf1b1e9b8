"""Occupancy grids as 3-channel probabilistic images.

Channel mapping: R = unknown, G = dynamic, B = static; free space is the
implicit remainder, so a pixel with low values in all channels is black.
Image row 0 is the far edge along the grid's +y axis (the ego's initial
heading renders "up"), i.e. the cell array flipped vertically.

Two storage precisions exist: float arrays in [0, 1] in memory, and 8-bit
PNG on disk with probability = round(p * 255) using round-half-away-from-zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .geometry import Pose2D
from .grid import DYNAMIC, FREE, STATIC, UNKNOWN, OccGrid, init_grid

R_UNKNOWN, G_DYNAMIC, B_STATIC = 0, 1, 2
SUM_TOL = 3.0 / 255.0
GROSS_SUM = 1.1


@dataclass
class GridImage:
    """(H, W, 3) probability image; channels R=unknown, G=dynamic, B=static."""

    data: np.ndarray
    t: int = 0

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "GridImage":
        return GridImage(self.data.copy(), self.t)

    def validate(self, tol: float = 1e-6) -> None:
        if np.any(self.data < -tol) or np.any(self.data > 1 + tol):
            raise ValueError("channel values outside [0, 1]")
        s = self.data.sum(axis=-1)
        if s.max() > 1.0 + SUM_TOL + tol:
            raise ValueError(f"channel sums reach {s.max():.4f}, above 1 + 3/255")


def encode(grid: OccGrid, t: int = 0) -> GridImage:
    """Grid -> image; row 0 is the far edge along the grid's +y axis."""
    img = np.flipud(grid.cells[..., [UNKNOWN, DYNAMIC, STATIC]]).copy()
    return GridImage(img, t)


def decode(
    image: GridImage,
    resolution: float = 0.1,
    origin: Pose2D = Pose2D(0.0, 0.0, 0.0),
    stats: dict | None = None,
) -> OccGrid:
    """Image -> grid; free mass is the residual 1 - R - G - B.

    Pixels slightly over 1 (quantization noise) are renormalized and counted
    in `stats["renormalized_pixels"]` when a dict is supplied; channel sums
    above 1.1 raise.
    """
    data = np.asarray(image.data, dtype=float)
    s = data.sum(axis=-1)
    if s.max() > GROSS_SUM:
        raise ValueError(f"channel sums reach {s.max():.4f}; not a valid grid image")
    over = s > 1.0
    n_over = int(np.count_nonzero(over))
    if stats is not None:
        stats["renormalized_pixels"] = n_over
    if n_over:
        data = data.copy()
        data[over] /= s[over][..., None]
    h, w = data.shape[:2]
    grid = init_grid(w, h, resolution, origin)
    flipped = np.flipud(data)
    grid.cells[..., UNKNOWN] = flipped[..., R_UNKNOWN]
    grid.cells[..., DYNAMIC] = flipped[..., G_DYNAMIC]
    grid.cells[..., STATIC] = flipped[..., B_STATIC]
    grid.cells[..., FREE] = np.maximum(0.0, 1.0 - flipped.sum(axis=-1))
    return grid


# -- 8-bit storage -----------------------------------------------------------


def quantize_u8(data: np.ndarray) -> np.ndarray:
    """Probabilities -> bytes, round-half-away-from-zero."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def to_u8_precision(image: GridImage) -> GridImage:
    """Apply 8-bit quantization while staying in float storage."""
    return GridImage(quantize_u8(image.data).astype(np.float32) / 255.0, image.t)


def write_png(image: GridImage, path) -> None:
    PILImage.fromarray(quantize_u8(image.data), mode="RGB").save(path, compress_level=1)


def read_png(path, t: int = 0) -> GridImage:
    arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return GridImage(arr, t)


def write_mask_png(mask: np.ndarray, path) -> None:
    PILImage.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path, compress_level=1)


def read_mask_png(path) -> np.ndarray:
    return np.asarray(PILImage.open(path).convert("L")) >= 128


# -- resizing ----------------------------------------------------------------


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) box-filter weights: each output averages its footprint."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * scale, (j + 1) * scale
        i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            w[j, i] = min(hi, i + 1) - max(lo, i)
    return w / scale


def _linear_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bilinear weights, edge-replicated."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        x = (j + 0.5) * scale - 0.5
        i0 = int(np.floor(x))
        f = x - i0
        ia, ib = np.clip(i0, 0, n_in - 1), np.clip(i0 + 1, 0, n_in - 1)
        w[j, ia] += 1.0 - f
        w[j, ib] += f
    return w


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    if n_out == n_in:
        return np.eye(n_in)
    return _area_weights(n_in, n_out) if n_out < n_in else _linear_weights(n_in, n_out)


def resize(image: GridImage, out_w: int, out_h: int) -> GridImage:
    """Resize with area averaging when shrinking, bilinear when growing.

    Area averaging preserves each channel's global mean exactly, so
    downsampled images remain valid probability maps.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    wr = _axis_weights(image.height, out_h)
    wc = _axis_weights(image.width, out_w)
    out = np.einsum("oi,iwc->owc", wr, image.data)
    out = np.einsum("pw,owc->opc", wc, out)
    return GridImage(np.clip(out, 0.0, 1.0), image.t)


def resize_mask(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbor mask resize; keeps masks strictly binary."""
    h, w = mask.shape
    rows = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return mask[rows][:, cols]
