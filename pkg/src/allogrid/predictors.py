"""Classical baseline predictors and the external-predictor protocol.

All predictors map N input grid images to P future images. Persistence
repeats the last input; advection additionally moves dynamic (G) mass along
a patch-correlation velocity field; the ego-warp baseline (ego-fixed variant
only) rigidly warps the last frame by extrapolated ego motion, which is the
compensation an ego-fixed grid needs because the whole scene moves around
the vehicle.

External predictors are separate programs invoked per sequence as

    <cmd> --seq <dir> --variant {allo|ego} --horizon P

and must write <dir>/pred/frame_000.png ... frame_{P-1}.png matching the
input dimensions. Malformed outputs mark that sequence failed; evaluation
continues with the rest.
"""
from __future__ import annotations

import math
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .correlation import zncc_displacement_search
from .geometry import Pose2D
from .gridimage import GROSS_SUM, GridImage, R_UNKNOWN, G_DYNAMIC, B_STATIC, read_png
from .sequences import GridSequence

EGO_WARP_FILL = np.array([1.0, 0.0, 0.0])  # unseen content is unknown


@dataclass
class Prediction:
    """P predicted grid images plus provenance."""

    frames: list
    predictor_id: str
    wall_time: float = 0.0
    fallback: bool = False

    def validate(self, p: int) -> None:
        if len(self.frames) != p:
            raise ValueError(f"prediction has {len(self.frames)} frames, expected {p}")
        for im in self.frames:
            im.validate()


@dataclass(frozen=True)
class AdvectParams:
    """Motion-field estimation settings for the advection baseline."""

    corr_window: int = 7
    corr_lag: int = 8         # capped at N - 1
    search_radius: int = 24
    peak_threshold: float = 0.5
    peak_margin: float = 0.05  # nonzero motion must beat the zero-offset score
    min_mass: float = 0.05    # G level that makes a block worth estimating
    block_stride: int = 4


def predict_persistence(inputs: list, p: int) -> Prediction:
    """Repeat the last input frame for every future step."""
    if len(inputs) < 1:
        raise ValueError("persistence needs at least one input frame")
    t0 = time.perf_counter()
    last = inputs[-1]
    frames = [GridImage(last.data.copy(), last.t + k + 1) for k in range(p)]
    return Prediction(frames, "persistence", time.perf_counter() - t0)


def _estimate_g_motion(
    ref_g: np.ndarray, cur_g: np.ndarray, params: AdvectParams, lag: int
) -> np.ndarray:
    """Dense per-pixel (drow, dcol) velocity of G mass, in pixels/frame.

    Block anchors where current G mass is present are matched backwards in
    time (current patch against the reference), so velocities sit where the
    mass is now; anchors without a confident peak fall back to the nearest
    confident block, and images without any confident block get zero motion.
    """
    h, w = cur_g.shape
    s = params.block_stride
    br = np.arange(s // 2, h, s)
    bc = np.arange(s // 2, w, s)
    grid_r, grid_c = np.meshgrid(br, bc, indexing="ij")
    block_mass = ndimage.maximum_filter(cur_g, size=s)[grid_r, grid_c]
    active = block_mass > params.min_mass
    vel_blocks = np.zeros(grid_r.shape + (2,))
    if np.any(active):
        rr = grid_r[active]
        cc = grid_c[active]
        dx, dy, peak, peak0 = zncc_displacement_search(
            cur_g, ref_g, rr, cc, params.corr_window, params.search_radius
        )
        moved = (dx != 0) | (dy != 0)
        good = (peak > params.peak_threshold) & (
            ~moved | (peak - peak0 > params.peak_margin)
        )
        vb = np.zeros((len(rr), 2))
        vb[good, 0] = -dy[good] / lag  # content moved cur->future opposite of cur->ref
        vb[good, 1] = -dx[good] / lag
        if np.any(good) and not np.all(good):
            # fill unconfident blocks from the nearest confident one
            conf = np.zeros(grid_r.shape, dtype=bool)
            conf[active] = good
            if np.any(conf):
                _, (ir, ic) = ndimage.distance_transform_edt(
                    ~conf, return_indices=True
                )
                full = np.zeros(grid_r.shape + (2,))
                full[active] = vb
                filled = full[ir, ic]
                vel_blocks[active] = filled[active]
            else:
                vel_blocks[active] = vb
        else:
            vel_blocks[active] = vb
    # expand block velocities to pixels
    row_of = np.minimum(np.arange(h) // s, len(br) - 1)
    col_of = np.minimum(np.arange(w) // s, len(bc) - 1)
    return vel_blocks[row_of][:, col_of]


def _splat(mass: np.ndarray, vel: np.ndarray, k: float) -> np.ndarray:
    """Forward-warp mass by k * vel (pixels) with bilinear splatting."""
    h, w = mass.shape
    src_r, src_c = np.nonzero(mass > 1e-9)
    out = np.zeros_like(mass)
    if len(src_r) == 0:
        return out
    m = mass[src_r, src_c]
    tr = src_r + k * vel[src_r, src_c, 0]
    tc = src_c + k * vel[src_r, src_c, 1]
    r0 = np.floor(tr).astype(np.int64)
    c0 = np.floor(tc).astype(np.int64)
    fr = tr - r0
    fc = tc - c0
    for rr, cc, wt in (
        (r0, c0, (1 - fr) * (1 - fc)),
        (r0, c0 + 1, (1 - fr) * fc),
        (r0 + 1, c0, fr * (1 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ):
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w) & (wt > 0)
        if np.any(ok):
            np.add.at(out, (rr[ok], cc[ok]), m[ok] * wt[ok])
    return out


def _clip_channel_sum(data: np.ndarray) -> np.ndarray:
    s = data.sum(axis=-1)
    over = s > 1.0
    if np.any(over):
        data[over] /= s[over][..., None]
    return data


def predict_advect(inputs: list, p: int, params: AdvectParams | None = None) -> Prediction:
    """Hold R/B from the last frame; forward-warp G mass along estimated flow."""
    params = params or AdvectParams()
    lag = min(params.corr_lag, len(inputs) - 1)
    if lag < 1:
        raise ValueError("advection needs at least two input frames")
    t0 = time.perf_counter()
    last = inputs[-1]
    ref_g = inputs[-1 - lag].data[..., G_DYNAMIC]
    cur_g = last.data[..., G_DYNAMIC]
    vel = _estimate_g_motion(ref_g, cur_g, params, lag)
    frames = []
    moving = np.max(np.abs(vel)) > 1e-12
    for k in range(1, p + 1):
        data = last.data.copy()
        if moving:
            data[..., G_DYNAMIC] = _splat(cur_g, vel, float(k))
            data = _clip_channel_sum(data)
        frames.append(GridImage(data, last.t + k))
    return Prediction(frames, "advect", time.perf_counter() - t0)


# -- ego-motion compensated baseline ----------------------------------------


def _relative_pose_per_frame(poses: list[Pose2D]) -> Pose2D | None:
    if len(poses) < 2:
        return None
    vals = [poses[-2], poses[-1]]
    for v in vals:
        if not all(math.isfinite(x) for x in (v.x, v.y, v.theta)):
            return None
    return poses[-2].inverse().compose(poses[-1])


def _pixel_to_body(n: int, resolution: float, extent: float) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame (x, y) meters of every pixel of an ego-centered image."""
    j = np.arange(n) + 0.5
    i_grid = n - 1 - np.arange(n) + 0.5
    gx, gy = np.meshgrid(j * resolution, i_grid * resolution, indexing="xy")
    # grid-local -> body: body x = local y - extent/2 (heading), body y = extent/2 - local x
    bx = gy - extent / 2.0
    by = extent / 2.0 - gx
    return bx, by


def _body_to_pixel_index(bx: np.ndarray, by: np.ndarray, n: int, resolution: float, extent: float):
    gx = extent / 2.0 - by
    gy = bx + extent / 2.0
    col = gx / resolution - 0.5
    grow = gy / resolution - 0.5
    row = (n - 1) - grow
    return row, col


def _warp_image_by_motion(image: GridImage, rel: Pose2D, resolution: float, extent: float) -> GridImage:
    """Resample an ego-centered image as seen after ego motion `rel`.

    `rel` is the motion from the image's frame to the output frame (relative
    pose of the new ego pose expressed in the old body frame).
    """
    if max(abs(rel.x), abs(rel.y), abs(rel.theta)) < 1e-12:
        return image.copy()
    n = image.height
    bx, by = _pixel_to_body(n, resolution, extent)
    c, s = math.cos(rel.theta), math.sin(rel.theta)
    bx_t = rel.x + c * bx - s * by
    by_t = rel.y + s * bx + c * by
    row, col = _body_to_pixel_index(bx_t, by_t, n, resolution, extent)
    out = np.empty_like(image.data)
    for ch, cval in ((R_UNKNOWN, EGO_WARP_FILL[0]), (G_DYNAMIC, 0.0), (B_STATIC, 0.0)):
        out[..., ch] = ndimage.map_coordinates(
            image.data[..., ch], [row, col], order=1, mode="constant", cval=cval
        )
    return GridImage(out, image.t)


def predict_ego_warp(
    inputs: list,
    ego_poses: list[Pose2D],
    p: int,
    resolution: float = 0.1,
    extent: float = 60.0,
    params: AdvectParams | None = None,
) -> Prediction:
    """Warp the last ego-fixed frame by extrapolated ego motion.

    Ego motion continues the constant twist implied by the last two input
    poses. G mass is additionally advected by object motion estimated after
    compensating the known ego motion between the reference and last input
    frames; a degenerate pose history falls back to persistence, flagged.
    """
    params = params or AdvectParams()
    t0 = time.perf_counter()
    delta = _relative_pose_per_frame(ego_poses[: len(inputs)])
    if delta is None:
        out = predict_persistence(inputs, p)
        return Prediction(out.frames, "ego_warp", time.perf_counter() - t0, fallback=True)

    last = inputs[-1]
    lag = min(params.corr_lag, len(inputs) - 1)
    vel = np.zeros(last.data.shape[:2] + (2,))
    if lag >= 1:
        # remove known ego motion from the reference frame, then match
        rel_lag = ego_poses[len(inputs) - 1 - lag].inverse().compose(ego_poses[len(inputs) - 1])
        ref_comp = _warp_image_by_motion(inputs[-1 - lag], rel_lag, resolution, extent)
        vel = _estimate_g_motion(
            ref_comp.data[..., G_DYNAMIC], last.data[..., G_DYNAMIC], params, lag
        )

    frames = []
    rel = Pose2D(0.0, 0.0, 0.0)
    moving_g = np.max(np.abs(vel)) > 1e-12
    for k in range(1, p + 1):
        rel = rel.compose(delta)
        base = last.data
        if moving_g:
            base = last.data.copy()
            base[..., G_DYNAMIC] = _splat(last.data[..., G_DYNAMIC], vel, float(k))
            base = _clip_channel_sum(base)
        warped = _warp_image_by_motion(GridImage(base, last.t), rel, resolution, extent)
        warped.t = last.t + k
        frames.append(warped)
    return Prediction(frames, "ego_warp", time.perf_counter() - t0)


# -- uniform entry points -----------------------------------------------------


def predict_sequence(seq: GridSequence, predictor: str, horizon: int | None = None) -> Prediction:
    """Run a built-in predictor on a sequence's inputs."""
    p = seq.p if horizon is None else horizon
    if predictor == "persistence":
        return predict_persistence(seq.inputs, p)
    if predictor == "advect":
        return predict_advect(seq.inputs, p)
    if predictor == "ego_warp":
        return predict_ego_warp(
            seq.inputs,
            seq.ego_poses[: seq.n],
            p,
            resolution=seq.frame_plan.resolution,
            extent=seq.frame_plan.extent,
        )
    raise ValueError(f"unknown predictor {predictor!r}; have {sorted(BUILTIN_PREDICTORS)}")


BUILTIN_PREDICTORS = ("persistence", "advect", "ego_warp")


# -- external predictor protocol ----------------------------------------------


@dataclass
class ExternalResult:
    """Per-sequence outcomes of an external predictor run."""

    predictions: dict = field(default_factory=dict)  # seq_id -> Prediction
    failures: dict = field(default_factory=dict)     # seq_id -> reason


def _validate_external_frames(pred_dir: Path, p: int, dims: tuple[int, int]) -> list:
    frames = []
    for k in range(p):
        fp = pred_dir / f"frame_{k:03d}.png"
        if not fp.exists():
            raise ValueError(f"missing {fp.name} (got {k} of {p} frames)")
        im = read_png(fp, t=k)
        if (im.height, im.width) != dims:
            raise ValueError(
                f"{fp.name} is {im.height}x{im.width}, inputs are {dims[0]}x{dims[1]}"
            )
        if im.data.sum(axis=-1).max() > GROSS_SUM:
            raise ValueError(f"{fp.name} has channel sums above {GROSS_SUM}")
        frames.append(im)
    return frames


def run_external(
    seq_dirs: list,
    command: str | list,
    p: int,
    variant: str,
    predictor_id: str = "external",
    timeout: float = 300.0,
) -> ExternalResult:
    """Invoke an external predictor over sequence directories.

    The program is run once per sequence; its pred/ output is validated for
    frame count, dimensions and value ranges. Failures are recorded per
    sequence and do not stop the run.
    """
    base = shlex.split(command) if isinstance(command, str) else list(command)
    result = ExternalResult()
    for seq_dir in seq_dirs:
        seq_dir = Path(seq_dir)
        seq_id = seq_dir.name
        argv = base + ["--seq", str(seq_dir), "--variant", variant, "--horizon", str(p)]
        t0 = time.perf_counter()
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout)
            if proc.returncode != 0:
                raise ValueError(
                    f"exit code {proc.returncode}: {proc.stderr.decode(errors='replace')[:200]}"
                )
            first = read_png(seq_dir / variant / "frame_000.png")
            frames = _validate_external_frames(
                seq_dir / "pred", p, (first.height, first.width)
            )
            result.predictions[seq_id] = Prediction(
                frames, predictor_id, time.perf_counter() - t0
            )
        except (ValueError, OSError, subprocess.SubprocessError) as e:
            result.failures[seq_id] = str(e)
    return result
