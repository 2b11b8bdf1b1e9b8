"""Sequence assembly, common-visibility masks, and the on-disk dataset layout.

A sequence is N input frames plus P target frames cut from one filtered
scenario run. For fair comparison between the world-fixed and ego-fixed
variants, each frame carries a visibility mask: a world point counts as
observed by a grid at frame t once its cell's unknown probability drops
below 0.5 at any frame <= t (cumulative from the sequence start), and the
mask keeps only points observed by BOTH grids. Masks are computed on the
world (allo) raster and materialized into each variant's own pixel
coordinates by nearest-neighbor lookup, so ego masks travel with the ego.

Dataset layout (one directory per sequence):

    root/{train,test}/<seq_id>/
        meta.json                 sequence geometry, poses, provenance
        scenario.json             the generating scenario
        allo/frame_###.png        world-fixed grid images (8-bit RGB)
        ego/frame_###.png         ego-fixed grid images
        mask/frame_###.png        common-visibility mask, world raster, 1-ch

Test-split images are stored with the common-visibility crop already applied
(inputs and targets), matching how an external predictor should see them;
the mask files allow metric computation restricted to the same region.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .filtering import FilterParams
from .frames import FramePlan, PairedRun, ego_centered_origin, run_paired_scenario
from .geometry import Pose2D
from .gridimage import GridImage, read_mask_png, read_png, write_mask_png, write_png
from .presets import MIX, make_scenario
from .scene import Scenario

N_INPUT = 10
P_HORIZON = 25


@dataclass
class GridSequence:
    """N input + P target grid images with per-frame ego poses."""

    inputs: list
    targets: list
    n: int
    p: int
    dt: float
    ego_poses: list
    frame_plan: FramePlan
    variant: str  # "allo" | "ego"
    seq_id: str = ""

    def __post_init__(self):
        if len(self.inputs) != self.n or len(self.targets) != self.p:
            raise ValueError("inputs/targets lengths must match N and P")
        dims = {(im.height, im.width) for im in self.inputs + self.targets}
        if len(dims) > 1:
            raise ValueError(f"mixed image dimensions in sequence: {dims}")

    @property
    def frames(self) -> list:
        return self.inputs + self.targets


@dataclass
class VisibilityMask:
    """Per-frame binary maps in one variant's pixel coordinates."""

    frames: list  # list of (H, W) bool arrays, one per sequence frame

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class PairMasks:
    """Common-visibility masks of one sequence pair."""

    world: list          # allo-raster cumulative common masks per frame
    allo: VisibilityMask
    ego: VisibilityMask


def build_sequences(
    frames: list,
    ego_poses: list,
    frame_plan: FramePlan,
    variant: str,
    n: int = N_INPUT,
    p: int = P_HORIZON,
    stride: int | None = None,
    dt: float = 0.1,
    seq_id: str = "",
) -> list[GridSequence]:
    """Cut sliding windows of N+P frames at the given stride.

    Default stride is the full window length, i.e. one sequence per run.
    """
    total = n + p
    if len(frames) < total:
        raise ValueError(f"need at least {total} frames, got {len(frames)}")
    stride = total if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out = []
    for k, start in enumerate(range(0, len(frames) - total + 1, stride)):
        out.append(
            GridSequence(
                inputs=frames[start : start + n],
                targets=frames[start + n : start + total],
                n=n,
                p=p,
                dt=dt,
                ego_poses=ego_poses[start : start + total],
                frame_plan=frame_plan,
                variant=variant,
                seq_id=f"{seq_id}+{k}" if seq_id and k else seq_id,
            )
        )
    return out


# -- pixel <-> world helpers (image row 0 = far edge along grid +y) ----------


def pixel_centers_world(origin: Pose2D, n_cells: int, resolution: float) -> np.ndarray:
    """(H, W, 2) world coordinates of image pixel centers."""
    j = np.arange(n_cells) + 0.5
    i = n_cells - 1 - np.arange(n_cells) + 0.5  # image row -> grid row
    local = np.stack(np.meshgrid(j, i, indexing="xy"), axis=-1) * resolution
    return origin.transform_points(local)


def world_to_pixel(
    origin: Pose2D, n_cells: int, resolution: float, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World points -> integer image (rows, cols, valid)."""
    local = origin.inverse_transform_points(pts) / resolution
    cols = np.floor(local[..., 0]).astype(np.int64)
    grows = np.floor(local[..., 1]).astype(np.int64)
    valid = (cols >= 0) & (cols < n_cells) & (grows >= 0) & (grows < n_cells)
    rows = n_cells - 1 - grows
    return rows, cols, valid


def visibility_mask(
    pair: PairedRun, start: int = 0, length: int | None = None, threshold: float = 0.5
) -> PairMasks:
    """Common-visibility masks for a window of one paired run.

    Observation accumulates on the world raster from the window start; the
    per-variant masks are nearest-neighbor materializations of the common
    set. The world masks are monotone non-decreasing by construction.
    """
    del threshold  # the observed maps are already thresholded at 0.5
    n_frames = len(pair.allo.images)
    length = n_frames - start if length is None else length
    plan = pair.plan
    n = plan.cells
    res = plan.resolution

    allo_acc = np.zeros((n, n), dtype=bool)
    ego_acc = np.zeros((n, n), dtype=bool)
    world_pts = pixel_centers_world(plan.allo_origin, n, res)
    world_masks, allo_masks, ego_masks = [], [], []
    for t in range(start, start + length):
        allo_acc |= pair.allo.observed[t]
        ego_origin = pair.ego.origins[t]
        rows, cols, valid = world_to_pixel(ego_origin, n, res, world_pts)
        seen = np.zeros((n, n), dtype=bool)
        seen[valid] = pair.ego.observed[t][rows[valid], cols[valid]]
        ego_acc |= seen
        common = allo_acc & ego_acc
        world_masks.append(common)
        allo_masks.append(common.copy())
        ego_pts = pixel_centers_world(ego_origin, n, res)
        wr, wc, wvalid = world_to_pixel(plan.allo_origin, n, res, ego_pts)
        ego_mask = np.zeros((n, n), dtype=bool)
        ego_mask[wvalid] = common[wr[wvalid], wc[wvalid]]
        ego_masks.append(ego_mask)
    return PairMasks(world=world_masks, allo=VisibilityMask(allo_masks), ego=VisibilityMask(ego_masks))


def apply_mask(seq: GridSequence, mask: VisibilityMask) -> GridSequence:
    """Black out pixels outside the per-frame mask in inputs and targets."""
    if len(mask) != seq.n + seq.p:
        raise ValueError(f"mask has {len(mask)} frames, sequence {seq.n + seq.p}")
    frames = []
    for im, m in zip(seq.frames, mask.frames):
        if m.shape != im.data.shape[:2]:
            raise ValueError(f"mask shape {m.shape} != image {im.data.shape[:2]}")
        frames.append(GridImage(im.data * m[..., None], im.t))
    return replace(seq, inputs=frames[: seq.n], targets=frames[seq.n :])


# -- on-disk dataset ---------------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    """Everything needed to filter one scenario into a sequence pair."""

    n: int = N_INPUT
    p: int = P_HORIZON
    extent: float = 60.0
    resolution: float = 0.1
    margin_behind: float = 10.0
    big_ego_extent: float = 140.0
    n_rays: int = 720
    max_range: float = 50.0
    allo_mode: str = "fuse"
    filter_params: FilterParams = field(default_factory=FilterParams)

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["filter_params"] = self.filter_params.__dict__.copy()
        d["filter_params"]["unknown_split"] = list(self.filter_params.unknown_split)
        return d


@dataclass
class PairRecord:
    """One scenario filtered into paired sequences plus masks."""

    seq_id: str
    scenario: Scenario
    pair: PairedRun
    masks: PairMasks
    sequences: dict  # variant -> GridSequence


def moving_ego(poses: list[Pose2D]) -> bool:
    d = math.hypot(poses[-1].x - poses[0].x, poses[-1].y - poses[0].y)
    dth = abs(poses[-1].theta - poses[0].theta)
    return d > 0.3 or dth > 0.05


def build_pair_record(scenario: Scenario, cfg: GenerationConfig, seq_id: str) -> PairRecord:
    scenario = replace(scenario, n_rays=cfg.n_rays, max_range=cfg.max_range)
    from .frames import plan_allo_frame
    from .scene import run_scenario

    log = run_scenario(scenario)
    plan = plan_allo_frame(
        log[0].ego_pose,
        extent=cfg.extent,
        resolution=cfg.resolution,
        margin_behind=cfg.margin_behind,
        big_ego_extent=cfg.big_ego_extent,
    )
    pair = run_paired_scenario(
        scenario, params=cfg.filter_params, mode=cfg.allo_mode, log=log, plan=plan
    )
    masks = visibility_mask(pair)
    sequences = {}
    for variant, run in (("allo", pair.allo), ("ego", pair.ego)):
        seqs = build_sequences(
            run.images, run.ego_poses, plan, variant,
            n=cfg.n, p=cfg.p, dt=scenario.dt, seq_id=seq_id,
        )
        sequences[variant] = seqs[0]
    return PairRecord(seq_id=seq_id, scenario=scenario, pair=pair, masks=masks, sequences=sequences)


def _meta_for(record: PairRecord, cfg: GenerationConfig, masked: bool) -> dict:
    seq = record.sequences["allo"]
    return {
        "seq_id": record.seq_id,
        "preset": record.scenario.name,
        "scenario_seed": record.scenario.rng_seed,
        "n": seq.n,
        "p": seq.p,
        "dt": record.scenario.dt,
        "grid": {
            "width_cells": record.pair.plan.cells,
            "height_cells": record.pair.plan.cells,
            "resolution": record.pair.plan.resolution,
        },
        "frame_plan": record.pair.plan.to_dict(),
        "ego_poses": [p.to_list() for p in seq.ego_poses],
        "moving_ego": moving_ego(seq.ego_poses),
        "masked": masked,
        "mask_rule": "observed iff p_unknown < 0.5 at any frame <= t in both grids",
        "eval_channels": "GB",
        "variants": ["allo", "ego"],
    }


def write_sequence_dir(record: PairRecord, out_dir: Path, cfg: GenerationConfig, masked: bool) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record.scenario.save(out_dir / "scenario.json")
    (out_dir / "meta.json").write_text(
        json.dumps(_meta_for(record, cfg, masked), indent=2, sort_keys=True)
    )
    mask_dir = out_dir / "mask"
    mask_dir.mkdir(exist_ok=True)
    for t, m in enumerate(record.masks.world):
        write_mask_png(m, mask_dir / f"frame_{t:03d}.png")
    for variant in ("allo", "ego"):
        seq = record.sequences[variant]
        if masked:
            seq = apply_mask(seq, getattr(record.masks, variant))
        vdir = out_dir / variant
        vdir.mkdir(exist_ok=True)
        for t, im in enumerate(seq.frames):
            write_png(im, vdir / f"frame_{t:03d}.png")


@dataclass
class SequenceRecord:
    """A sequence pair loaded back from disk."""

    seq_id: str
    path: Path
    meta: dict
    plan: FramePlan
    ego_poses: list
    images: dict           # variant -> list[GridImage]
    world_masks: list      # allo-raster bool arrays
    variant_masks: dict    # variant -> VisibilityMask

    @property
    def n(self) -> int:
        return int(self.meta["n"])

    @property
    def p(self) -> int:
        return int(self.meta["p"])

    def sequence(self, variant: str) -> GridSequence:
        imgs = self.images[variant]
        return GridSequence(
            inputs=imgs[: self.n],
            targets=imgs[self.n :],
            n=self.n,
            p=self.p,
            dt=float(self.meta["dt"]),
            ego_poses=self.ego_poses,
            frame_plan=self.plan,
            variant=variant,
            seq_id=self.seq_id,
        )


def read_sequence(seq_dir) -> SequenceRecord:
    seq_dir = Path(seq_dir)
    meta_path = seq_dir / "meta.json"
    if not meta_path.exists():
        raise ValueError(f"not a sequence directory (missing meta.json): {seq_dir}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed meta.json in {seq_dir}: {e}") from e
    plan = FramePlan.from_dict(meta["frame_plan"])
    poses = [Pose2D.from_list(v) for v in meta["ego_poses"]]
    total = int(meta["n"]) + int(meta["p"])
    images: dict = {}
    for variant in meta.get("variants", ["allo", "ego"]):
        frames = []
        for t in range(total):
            fp = seq_dir / variant / f"frame_{t:03d}.png"
            if not fp.exists():
                raise ValueError(f"missing frame {fp}")
            frames.append(read_png(fp, t))
        images[variant] = frames
    world_masks = []
    for t in range(total):
        mp = seq_dir / "mask" / f"frame_{t:03d}.png"
        if not mp.exists():
            raise ValueError(f"missing mask {mp}")
        world_masks.append(read_mask_png(mp))

    n = plan.cells
    allo_masks = [m.copy() for m in world_masks]
    ego_masks = []
    for t in range(total):
        origin = ego_centered_origin(poses[t], plan.extent)
        ego_pts = pixel_centers_world(origin, n, plan.resolution)
        wr, wc, valid = world_to_pixel(plan.allo_origin, n, plan.resolution, ego_pts)
        m = np.zeros((n, n), dtype=bool)
        m[valid] = world_masks[t][wr[valid], wc[valid]]
        ego_masks.append(m)
    return SequenceRecord(
        seq_id=meta["seq_id"],
        path=seq_dir,
        meta=meta,
        plan=plan,
        ego_poses=poses,
        images=images,
        world_masks=world_masks,
        variant_masks={"allo": VisibilityMask(allo_masks), "ego": VisibilityMask(ego_masks)},
    )


def list_sequences(root, split: str | None = None) -> list[Path]:
    root = Path(root)
    splits = [split] if split else ["train", "test"]
    dirs = []
    for s in splits:
        base = root / s
        if base.exists():
            dirs.extend(sorted(d for d in base.iterdir() if d.is_dir()))
    return dirs


def read_dataset(root, split: str | None = None) -> list[SequenceRecord]:
    dirs = list_sequences(root, split)
    if not dirs:
        raise ValueError(f"no sequences found under {root} (split={split})")
    return [read_sequence(d) for d in dirs]


# -- generation --------------------------------------------------------------


def _generate_one(args) -> str:
    preset, seed, seq_dir, cfg, masked = args
    scenario = make_scenario(preset, seed)
    record = build_pair_record(scenario, cfg, seq_id=Path(seq_dir).name)
    write_sequence_dir(record, Path(seq_dir), cfg, masked)
    return Path(seq_dir).name


def generate_dataset(
    root,
    n_train: int = 200,
    n_test: int = 40,
    seed: int = 0,
    presets: list[str] | None = None,
    cfg: GenerationConfig | None = None,
    workers: int = 1,
) -> dict:
    """Write a desk-scale train/test dataset from the preset mix.

    Train/test scenarios draw from disjoint seed ranges; the split ratio of
    the 200/40 default mirrors an 85/15 scene split. Returns summary counts.
    """
    root = Path(root)
    cfg = cfg or GenerationConfig()
    presets = presets or MIX
    jobs = []
    for i in range(n_train):
        preset = presets[i % len(presets)]
        s = seed + i
        jobs.append((preset, s, root / "train" / f"{i:04d}_{preset}", cfg, False))
    for i in range(n_test):
        preset = presets[i % len(presets)]
        s = seed + 100000 + i
        jobs.append((preset, s, root / "test" / f"{i:04d}_{preset}", cfg, True))

    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(
        json.dumps(
            {"n_train": n_train, "n_test": n_test, "seed": seed, "presets": presets,
             "generation": cfg.to_dict()},
            indent=2,
            sort_keys=True,
        )
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = list(ex.map(_generate_one, jobs))
    else:
        done = [_generate_one(j) for j in jobs]
    summary = {
        "train": sum(1 for j in jobs if "train" in str(j[2])),
        "test": sum(1 for j in jobs if "test" in str(j[2])),
        "written": len(done),
    }
    return summary
