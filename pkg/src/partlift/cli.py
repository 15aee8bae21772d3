"""Command-line interface: generate / segment / eval / ablate.

Exit codes: 0 success, 1 expected failure (missing or malformed inputs),
2 contract violation (invalid parameter values).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import em as em_mod
from . import grouping, masks as masks_mod, metrics, pipeline, ply, scenes, superpoints, voting
from .errors import PipelineError
from .geometry import load_rig, save_rig


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise PipelineError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise PipelineError(f"{path}: invalid JSON ({e})") from None


def _load_rig(path):
    try:
        return load_rig(path)
    except OSError as e:
        raise PipelineError(f"cannot read rig {path}: {e.strerror}") from None


def _load_cloud(path):
    try:
        return ply.load_ply(path)
    except OSError as e:
        raise PipelineError(f"cannot read cloud {path}: {e.strerror}") from None


def _load_labels(path) -> np.ndarray:
    try:
        with open(path) as f:
            return np.array([int(line.strip()) for line in f if line.strip()], dtype=np.int64)
    except OSError as e:
        raise PipelineError(f"cannot read labels {path}: {e.strerror}") from None


# --- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    batch = scenes.make_benchmark(
        count=1,
        seed=args.seed,
        difficulty=args.difficulty,
        target_points=args.target_points,
        views=args.views,
    )
    spec, rig = batch[0]
    cloud, gt_cat, gt_inst = scenes.generate(spec)

    ply.save_ply(out / "cloud.ply", cloud)
    save_rig(out / "rig.json", rig)
    scenes.save_scene_spec(out / "scene.json", spec)
    gt_seg = pipeline.build_gt_segmentation(gt_cat, gt_inst)
    grouping.save_instances(out / "gt.json", gt_seg)

    cfg = pipeline.PipelineConfig(seed=args.seed)
    renders = pipeline.render_views(cloud, rig, cfg)
    mask_set = pipeline.scene_masks(cloud, rig, renders, gt_cat, gt_inst)
    masks_mod.save_masks(out, mask_set)
    if args.corrupt:
        corrupted = masks_mod.corrupt(mask_set, args.corrupt, seed=args.seed)
        masks_mod.save_masks(out / "masks_corrupt", corrupted)
    print(f"wrote scene with {cloud.n} points, {gt_seg.n_instances} instances, "
          f"{mask_set.m} masks to {out}")
    return 0


# --- segment -----------------------------------------------------------------

_SEGMENT_FLAGS = [
    # (flag dest, config field, type)
    ("seed", "seed", int),
    ("threads", "threads", int),
    ("splat_radius", "splat_radius", int),
    ("depth_tolerance", "depth_tolerance", float),
    ("normal_angle_max", "normal_angle_max", float),
    ("color_dist_max", "color_dist_max", float),
    ("spatial_knn", "spatial_knn", int),
    ("min_superpoint_size", "min_superpoint_size", int),
    ("assign_threshold", "assign_threshold", float),
    ("feature_threshold", "feature_threshold", float),
    ("split_radius", "split_radius", float),
    ("min_cluster", "min_cluster", int),
]

_EM_FLAGS = [
    ("em_iterations", "iterations", int),
    ("learning_rate", "learning_rate", float),
    ("grad_steps", "grad_steps_per_m", int),
    ("view_schedule", "view_schedule", str),
    ("slack_labels", "slack_labels", int),
]


def build_segment_config(args) -> pipeline.PipelineConfig:
    """defaults < --config file < explicit flags; the root seed drives the
    refinement schedule."""
    if args.config:
        config = pipeline.PipelineConfig.from_dict(_read_json(args.config))
    else:
        config = pipeline.PipelineConfig()
    overrides = {}
    for dest, field_name, _ in _SEGMENT_FLAGS:
        value = getattr(args, dest)
        if value is not None:
            overrides[field_name] = value
    em_overrides = {}
    for dest, field_name, _ in _EM_FLAGS:
        value = getattr(args, dest)
        if value is not None:
            em_overrides[field_name] = value
    if args.identity_partition:
        overrides["identity_partition"] = True
    if args.category_restricted:
        em_overrides["category_restricted"] = True
    for toggle in ("no_em", "no_init", "no_post"):
        if getattr(args, toggle):
            overrides[toggle] = True
    if em_overrides:
        config = replace(config, em=replace(config.em, **em_overrides))
    if overrides:
        config = replace(config, **overrides)
    return replace(config, em=replace(config.em, seed=config.seed))


def cmd_segment(args) -> int:
    config = build_segment_config(args)
    cloud = _load_cloud(args.cloud)
    rig = _load_rig(args.rig)
    mask_set = masks_mod.load_masks(args.masks)
    partition = None
    if args.partition:
        try:
            partition = superpoints.load_partition(
                args.partition, cloud, spatial_knn=config.spatial_knn
            )
        except OSError as e:
            raise PipelineError(f"cannot read partition {args.partition}: {e.strerror}") from None
    gt_seg = None
    gt_semantics = None
    if args.gt:
        gt_seg = grouping.load_instances(args.gt)
        if gt_seg.n_points != cloud.n:
            raise PipelineError(
                f"gt {args.gt} covers {gt_seg.n_points} points but the cloud has {cloud.n}"
            )
        gt_semantics = gt_seg.point_categories()

    result = pipeline.segment_scene(
        cloud, rig, mask_set, config=config, partition=partition, gt=gt_seg,
        gt_semantics=gt_semantics,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    voting.save_labels(out / "semantic_labels.txt", result.point_semantic)
    grouping.save_instances(out / "instances.json", result.final)
    em_mod.save_trace_csv(out / "em_trace.csv", result.trace)
    if result.report is not None:
        metrics.save_report(out / "report.json", result.report)
        print(result.report.to_text())
    print(
        f"segmented {cloud.n} points into {result.final.n_instances} instances "
        f"({result.partition.n_superpoints} superpoints); outputs in {out}"
    )
    return 0


# --- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred = grouping.load_instances(args.pred)
    gt = grouping.load_instances(args.gt)
    pred_sem = _load_labels(args.pred_semantics) if args.pred_semantics else None
    gt_sem = _load_labels(args.gt_semantics) if args.gt_semantics else None
    report = metrics.evaluate(pred, gt, pred_semantics=pred_sem, gt_semantics=gt_sem)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.to_text())
    if args.out:
        metrics.save_report(args.out, report)
    return 0


# --- ablate ------------------------------------------------------------------


def cmd_ablate(args) -> int:
    batch = scenes.make_benchmark(
        count=args.scenes,
        seed=args.seed,
        difficulty=args.difficulty,
        target_points=args.target_points,
        views=args.views,
    )
    config = pipeline.PipelineConfig(seed=args.seed, threads=args.threads or 0)
    config = replace(config, em=replace(config.em, seed=args.seed))
    result = pipeline.ablation_run(batch, corruption=args.corrupt, config=config)
    print(result.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.json", "w") as f:
            json.dump(result.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partlift",
        description="Lift multi-view 2D instance masks into 3D part segmentation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="emit a synthetic labeled scene with GT masks")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--difficulty", choices=("easy", "hard"), default="easy")
    g.add_argument("--target-points", type=int, default=20000)
    g.add_argument("--views", type=int, default=10)
    g.add_argument("--corrupt", type=str, default=None,
                   help="also emit a corrupted mask set, e.g. bboxify or dilate(2)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("segment", help="run the lifting pipeline on a scene")
    s.add_argument("--cloud", required=True, help="input PLY point cloud")
    s.add_argument("--rig", required=True, help="camera rig JSON")
    s.add_argument("--masks", required=True, help="mask directory (PNGs + masks.json)")
    s.add_argument("--partition", default=None, help="optional superpoint file")
    s.add_argument("--gt", default=None, help="optional GT instances JSON for a report")
    s.add_argument("--config", default=None, help="JSON config overriding the defaults")
    s.add_argument("--out", required=True)
    for dest, _, typ in _SEGMENT_FLAGS:
        s.add_argument("--" + dest.replace("_", "-"), type=typ, default=None)
    for dest, _, typ in _EM_FLAGS:
        kwargs = {"type": typ, "default": None}
        if dest == "view_schedule":
            kwargs["choices"] = ("random", "round-robin")
        s.add_argument("--" + dest.replace("_", "-"), **kwargs)
    s.add_argument("--identity-partition", action="store_true")
    s.add_argument("--category-restricted", action="store_true")
    s.add_argument("--no-em", action="store_true", help="skip refinement (ablation)")
    s.add_argument("--no-init", action="store_true",
                   help="seed refinement from a single all-points instance (ablation)")
    s.add_argument("--no-post", action="store_true", help="skip the connected split (ablation)")
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score predicted instances against ground truth")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--pred-semantics", default=None, help="per-point label file")
    e.add_argument("--gt-semantics", default=None, help="per-point label file")
    e.add_argument("--json", action="store_true", help="print the report as JSON")
    e.add_argument("--out", default=None, help="also write the report JSON here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="compare full / no_em / no_init / no_post")
    a.add_argument("--scenes", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--difficulty", choices=("easy", "hard"), default="hard")
    a.add_argument("--target-points", type=int, default=20000)
    a.add_argument("--views", type=int, default=10)
    a.add_argument("--corrupt", type=str, default=None)
    a.add_argument("--threads", type=int, default=None)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
