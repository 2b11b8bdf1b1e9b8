"""Command-line entry point wiring the full pipeline.

Subcommands: simulate, filter, build-dataset, predict, evaluate, compare,
render. `compare` runs the whole paired experiment in one shot: generate a
dataset, run the built-in predictors on both grid variants, evaluate inside
the common-visibility mask, and emit metrics.csv, horizon curves and a
qualitative comparison strip.

Flag values override --config file entries, which override defaults. The
effective configuration is echoed into every output directory. ALLOGRID_OUT
sets the default output root.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .evaluate import (
    LossWeights,
    evaluate_prediction,
    horizon_curves,
    render_comparison_strip,
    write_eval_meta,
    write_metrics_csv,
)
from .filtering import FilterParams
from .frames import plan_allo_frame, run_allo_pipeline, run_ego_pipeline
from .grid import write_snapshot
from .gridimage import write_png
from .predictors import BUILTIN_PREDICTORS, predict_sequence, run_external
from .presets import MIX, PRESETS, make_scenario
from .scene import Scenario, read_sensor_log, run_scenario, write_sensor_log
from .sequences import (
    GenerationConfig,
    generate_dataset,
    list_sequences,
    read_sequence,
)


def _default_out(subcommand: str) -> str:
    root = os.environ.get("ALLOGRID_OUT", "allogrid_out")
    return str(Path(root) / subcommand)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SystemExit(f"cannot read config {path}: {e}")


def _merge(args: argparse.Namespace, config: dict, key: str, default):
    """flag > config file > default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in config:
        return config[key]
    return default


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str)
    )


def _gen_config(args, config) -> GenerationConfig:
    return GenerationConfig(
        n=_merge(args, config, "n-input", 10),
        p=_merge(args, config, "horizon", 25),
        extent=_merge(args, config, "extent", 60.0),
        resolution=_merge(args, config, "resolution", 0.1),
        margin_behind=_merge(args, config, "margin-behind", 10.0),
        big_ego_extent=_merge(args, config, "big-extent", 140.0),
        n_rays=_merge(args, config, "rays", 720),
        max_range=_merge(args, config, "max-range", 50.0),
        allo_mode=_merge(args, config, "mode", "fuse"),
        filter_params=FilterParams(),
    )


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    out = Path(_merge(args, config, "out", _default_out("simulate")))
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario:
        scenario = Scenario.load(args.scenario)
    else:
        scenario = make_scenario(_merge(args, config, "preset", "straight-drive"),
                                 _merge(args, config, "seed", 0))
    log = run_scenario(scenario)
    scenario.save(out / "scenario.json")
    write_sensor_log(log, out / "sensor_log.ndjson")
    _echo_config(out, {"subcommand": "simulate", "scenario": scenario.to_dict()})
    print(f"wrote {len(log)} frames to {out / 'sensor_log.ndjson'}")
    return 0


def cmd_filter(args) -> int:
    config = _load_config(args.config)
    out = Path(_merge(args, config, "out", _default_out("filter")))
    out.mkdir(parents=True, exist_ok=True)
    log = read_sensor_log(args.log)
    variant = _merge(args, config, "variant", "allo")
    mode = _merge(args, config, "mode", "fuse")
    extent = _merge(args, config, "extent", 60.0)
    resolution = _merge(args, config, "resolution", 0.1)
    params = FilterParams()
    if variant == "allo":
        plan = plan_allo_frame(
            log[0].ego_pose,
            extent=extent,
            resolution=resolution,
            margin_behind=_merge(args, config, "margin-behind", extent / 6.0),
            big_ego_extent=_merge(args, config, "big-extent", 140.0),
        )
        run = run_allo_pipeline(log, plan, mode=mode, params=params)
    elif variant == "ego":
        run = run_ego_pipeline(log, extent=extent, resolution=resolution, params=params)
    else:
        raise SystemExit(f"unknown variant {variant!r}")
    for t, img in enumerate(run.images):
        write_png(img, out / f"frame_{t:03d}.png")
    if run.final_grid is not None:
        write_snapshot(run.final_grid, out / "final_grid.dogm")
    _echo_config(out, {"subcommand": "filter", "variant": variant, "mode": mode,
                       "extent": extent, "resolution": resolution,
                       "filter_params": params.__dict__})
    print(f"filtered {len(run.images)} frames ({variant}/{mode}) into {out}")
    return 0


def cmd_build_dataset(args) -> int:
    config = _load_config(args.config)
    out = Path(_merge(args, config, "out", _default_out("dataset")))
    cfg = _gen_config(args, config)
    presets = _merge(args, config, "presets", None)
    preset_list = presets.split(",") if isinstance(presets, str) else (presets or MIX)
    summary = generate_dataset(
        out,
        n_train=_merge(args, config, "n-train", 200),
        n_test=_merge(args, config, "n-test", 40),
        seed=_merge(args, config, "seed", 0),
        presets=preset_list,
        cfg=cfg,
        workers=_merge(args, config, "workers", 1),
    )
    _echo_config(out, {"subcommand": "build-dataset", "summary": summary,
                       "generation": cfg.to_dict()})
    print(f"dataset at {out}: {summary['train']} train / {summary['test']} test sequences")
    return 0


def _predictors_for(variant: str, requested: list[str]) -> list[str]:
    return [p for p in requested if not (p == "ego_warp" and variant == "allo")]


def cmd_predict(args) -> int:
    config = _load_config(args.config)
    dataset = Path(_merge(args, config, "dataset", _default_out("dataset")))
    split = _merge(args, config, "split", "test")
    variant = _merge(args, config, "variant", "allo")
    dirs = list_sequences(dataset, split)
    if not dirs:
        raise SystemExit(f"no sequences under {dataset}/{split}")
    if args.external_cmd:
        first = read_sequence(dirs[0])
        res = run_external(dirs, args.external_cmd, first.p, variant)
        print(f"external predictor: {len(res.predictions)} ok, {len(res.failures)} failed")
        for sid, why in res.failures.items():
            print(f"  FAILED {sid}: {why}")
        return 0 if res.predictions else 1
    predictor = _merge(args, config, "predictor", "persistence")
    for d in dirs:
        rec = read_sequence(d)
        seq = rec.sequence(variant)
        pred = predict_sequence(seq, predictor)
        pred_dir = d / "pred"
        pred_dir.mkdir(exist_ok=True)
        for k, im in enumerate(pred.frames):
            write_png(im, pred_dir / f"frame_{k:03d}.png")
    print(f"wrote {predictor} predictions for {len(dirs)} sequences ({variant})")
    return 0


def _evaluate_records(dataset: Path, split: str, variants: list[str], predictors: list[str],
                      weights: LossWeights, masked: bool, external_cmd: str | None = None):
    rows = []
    failures = {}
    dirs = list_sequences(dataset, split)
    if not dirs:
        raise SystemExit(f"no sequences under {dataset}/{split}")
    external = {}
    if external_cmd:
        first = read_sequence(dirs[0])
        for variant in variants:
            res = run_external(dirs, external_cmd, first.p, variant)
            external[variant] = res
            failures.update({f"{k} ({variant})": v for k, v in res.failures.items()})
    for d in dirs:
        rec = read_sequence(d)
        for variant in variants:
            seq = rec.sequence(variant)
            mask = rec.variant_masks[variant] if masked else None
            for predictor in _predictors_for(variant, predictors):
                pred = predict_sequence(seq, predictor)
                rows.extend(evaluate_prediction(seq, pred, mask, weights).rows)
            if external_cmd and rec.seq_id in external[variant].predictions:
                pred = external[variant].predictions[rec.seq_id]
                rows.extend(evaluate_prediction(seq, pred, mask, weights).rows)
    return rows, failures


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    dataset = Path(_merge(args, config, "dataset", _default_out("dataset")))
    out = Path(_merge(args, config, "out", _default_out("evaluate")))
    out.mkdir(parents=True, exist_ok=True)
    variants = _merge(args, config, "variant", "allo,ego").split(",")
    predictors = _merge(args, config, "predictor", "persistence").split(",")
    weights = LossWeights(alpha=_merge(args, config, "alpha", 0.2),
                          beta=_merge(args, config, "beta", 0.8))
    masked = not args.unmasked
    rows, failures = _evaluate_records(
        dataset, _merge(args, config, "split", "test"), variants, predictors,
        weights, masked, args.external_cmd,
    )
    write_metrics_csv(rows, out / "metrics.csv")
    write_eval_meta(out / "eval_meta.json", weights, masked)
    horizon_curves(rows, out)
    _echo_config(out, {"subcommand": "evaluate", "variants": variants,
                       "predictors": predictors, "masked": masked})
    print(f"{len(rows)} metric rows -> {out / 'metrics.csv'}")
    if failures:
        print(f"{len(failures)} external failures; evaluation continued without them")
    return 0


def cmd_compare(args) -> int:
    config = _load_config(args.config)
    out = Path(_merge(args, config, "out", _default_out("compare")))
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "dataset"
    cfg = _gen_config(args, config)
    preset = _merge(args, config, "preset", "mix")
    preset_list = MIX if preset == "mix" else [preset]
    n_train = _merge(args, config, "n-train", 200)
    n_test = _merge(args, config, "n-test", 40)
    seed = _merge(args, config, "seed", 0)
    summary = generate_dataset(
        dataset, n_train=n_train, n_test=n_test, seed=seed,
        presets=preset_list, cfg=cfg, workers=_merge(args, config, "workers", 1),
    )
    predictors = _merge(args, config, "predictors", "persistence,advect,ego_warp").split(",")
    weights = LossWeights(alpha=_merge(args, config, "alpha", 0.2),
                          beta=_merge(args, config, "beta", 0.8))
    rows, _ = _evaluate_records(dataset, "test", ["allo", "ego"], predictors, weights, True)
    write_metrics_csv(rows, out / "metrics.csv")
    write_eval_meta(out / "eval_meta.json", weights, masked=True)
    horizon_curves(rows, out)

    # qualitative side-by-side strip of the first test sequence
    dirs = list_sequences(dataset, "test")
    if dirs:
        rec = read_sequence(dirs[0])
        strips = out / "strips"
        strips.mkdir(exist_ok=True)
        for variant in ("allo", "ego"):
            seq = rec.sequence(variant)
            preds = [predict_sequence(seq, p) for p in _predictors_for(variant, predictors)]
            render_comparison_strip(seq, preds, path=strips / f"{rec.seq_id}_{variant}.png")
    _echo_config(out, {"subcommand": "compare", "summary": summary,
                       "predictors": predictors, "seed": seed,
                       "n_train": n_train, "n_test": n_test,
                       "generation": cfg.to_dict()})
    print(f"compare run complete: {out / 'metrics.csv'}, curves + strips alongside")
    return 0


def cmd_render(args) -> int:
    config = _load_config(args.config)
    dataset = Path(_merge(args, config, "dataset", _default_out("dataset")))
    out = Path(_merge(args, config, "out", _default_out("render")))
    out.mkdir(parents=True, exist_ok=True)
    variant = _merge(args, config, "variant", "allo")
    predictors = _merge(args, config, "predictors", "persistence").split(",")
    instants = tuple(float(v) for v in _merge(args, config, "instants", "0.5,1.5,2.5").split(","))
    target = None
    for d in list_sequences(dataset):
        if d.name == args.seq or args.seq is None:
            target = d
            break
    if target is None:
        raise SystemExit(f"sequence {args.seq!r} not found under {dataset}")
    rec = read_sequence(target)
    seq = rec.sequence(variant)
    preds = [predict_sequence(seq, p) for p in _predictors_for(variant, predictors)]
    zoom = tuple(int(v) for v in args.zoom.split(",")) if args.zoom else None
    path = out / f"{rec.seq_id}_{variant}_strip.png"
    render_comparison_strip(seq, preds, instants=instants, path=path, zoom=zoom)
    print(f"wrote {path}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="allogrid",
        description="world-fixed vs ego-fixed occupancy grid prediction pipeline",
    )
    ap.add_argument("--version", action="version", version=f"allogrid {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="generate a scenario and its sensor log")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", help="load a scenario JSON instead of a preset")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("filter", help="run the occupancy filter over a sensor log")
    common(p)
    p.add_argument("--log", required=True, help="sensor log (ndjson)")
    p.add_argument("--variant", choices=["allo", "ego"])
    p.add_argument("--mode", choices=["fuse", "direct"])
    p.add_argument("--extent", type=float)
    p.add_argument("--resolution", type=float)
    p.add_argument("--margin-behind", type=float)
    p.add_argument("--big-extent", type=float)
    p.set_defaults(fn=cmd_filter)

    def dataset_flags(p):
        p.add_argument("--n-train", type=int)
        p.add_argument("--n-test", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--n-input", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--extent", type=float)
        p.add_argument("--resolution", type=float)
        p.add_argument("--margin-behind", type=float)
        p.add_argument("--big-extent", type=float)
        p.add_argument("--rays", type=int)
        p.add_argument("--max-range", type=float)
        p.add_argument("--mode", choices=["fuse", "direct"])

    p = sub.add_parser("build-dataset", help="write a train/test sequence dataset")
    common(p)
    p.add_argument("--presets", help="comma list of presets (default: mix)")
    dataset_flags(p)
    p.set_defaults(fn=cmd_build_dataset)

    p = sub.add_parser("predict", help="write pred/ frames for dataset sequences")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--variant", choices=["allo", "ego"])
    p.add_argument("--predictor", choices=list(BUILTIN_PREDICTORS))
    p.add_argument("--external-cmd", help="external predictor command")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictors on a dataset")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--variant", help="comma list: allo,ego")
    p.add_argument("--predictor", help="comma list of built-ins")
    p.add_argument("--external-cmd", help="external predictor command")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--unmasked", action="store_true",
                   help="diagnostic: skip the common-visibility crop")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("compare", help="full paired experiment in one command")
    common(p)
    p.add_argument("--preset", help="preset name or 'mix'")
    p.add_argument("--predictors", help="comma list of built-ins")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    dataset_flags(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("render", help="qualitative comparison strip for one sequence")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--seq", help="sequence id (default: first)")
    p.add_argument("--variant", choices=["allo", "ego"])
    p.add_argument("--predictors")
    p.add_argument("--instants", help="comma list of seconds, default 0.5,1.5,2.5")
    p.add_argument("--zoom", help="crop box row0,col0,row1,col1")
    p.set_defaults(fn=cmd_render)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except Exception as e:  # pipeline failure -> exit 1 with diagnostics
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
