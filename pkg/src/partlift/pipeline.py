"""End-to-end orchestration: render, oversegment, vote, group, refine, split.

Also hosts the ablation harness that reruns the pipeline with individual
stages disabled and compares the resulting metrics.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import em as em_mod
from . import grouping, masks as masks_mod, metrics, scenes, superpoints, voting
from .em import EMConfig, TraceRow
from .errors import StageError
from .geometry import CameraView, PointCloud, ViewRender, render_visibility
from .grouping import Instance, InstanceSegmentation
from .masks import MaskSet
from .metrics import EvalReport
from .superpoints import SuperpointPartition


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 0  # 0 means all available cores
    # rendering
    splat_radius: int = 1
    depth_tolerance: float = 0.01
    # superpoints
    normal_angle_max: float = 30.0
    color_dist_max: float = 0.2
    spatial_knn: int = 16
    min_superpoint_size: int = 10
    identity_partition: bool = False
    # voting
    assign_threshold: float = 0.0
    # grouping
    feature_threshold: float = 0.3
    # refinement
    em: EMConfig = field(default_factory=EMConfig)
    # post-processing
    split_radius: float = 0.05
    min_cluster: int = 10
    # stage toggles (ablation variants)
    no_em: bool = False
    no_init: bool = False
    no_post: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        em_doc = doc.pop("em", {})
        known_em = {k: em_doc[k] for k in EMConfig.__dataclass_fields__ if k in em_doc}
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc and k != "em"}
        return cls(em=EMConfig(**known_em), **known)

    def effective_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


@dataclass
class SegmentationResult:
    partition: SuperpointPartition
    semantics: voting.SemanticScores
    point_semantic: np.ndarray
    initial: InstanceSegmentation
    refined: InstanceSegmentation
    final: InstanceSegmentation
    trace: list[TraceRow]
    report: EvalReport | None = None


def render_views(
    cloud: PointCloud, rig: list[CameraView], config: PipelineConfig
) -> list[ViewRender]:
    """Z-buffer all views; independent views render in parallel but are
    collected in rig order."""
    def one(view: CameraView) -> ViewRender:
        return render_visibility(
            cloud, view, splat_radius=config.splat_radius, depth_tolerance=config.depth_tolerance
        )

    n_workers = min(config.effective_threads(), len(rig))
    if n_workers <= 1:
        return [one(v) for v in rig]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, rig))


def build_partition(cloud: PointCloud, config: PipelineConfig) -> SuperpointPartition:
    if config.identity_partition:
        return superpoints.identity_partition(cloud, spatial_knn=config.spatial_knn)
    return superpoints.oversegment(
        cloud,
        normal_angle_max=config.normal_angle_max,
        color_dist_max=config.color_dist_max,
        spatial_knn=config.spatial_knn,
        min_size=config.min_superpoint_size,
    )


def single_instance_init(
    partition: SuperpointPartition, semantics: voting.SemanticScores
) -> InstanceSegmentation:
    """Degenerate initialization: one instance holding every point, labeled
    with the size-weighted majority category (0 when nothing is labeled)."""
    n = partition.n_points
    sizes = partition.sizes.astype(np.float64)
    labeled = semantics.labels >= 0
    if labeled.any() and semantics.n_categories > 0:
        weights = np.zeros(semantics.n_categories)
        np.add.at(weights, semantics.labels[labeled], sizes[labeled])
        category = int(np.argmax(weights))
        conf = float(
            np.sum(sizes[labeled] * semantics.scores[labeled, category]) / np.sum(sizes[labeled])
        )
    else:
        category, conf = 0, 0.0
    return InstanceSegmentation(
        point_instance=np.zeros(n, dtype=np.int64),
        instances=[Instance(category=category, points=np.arange(n, dtype=np.int64), confidence=conf)],
    )


def segment_scene(
    cloud: PointCloud,
    rig: list[CameraView],
    mask_set: MaskSet,
    config: PipelineConfig | None = None,
    partition: SuperpointPartition | None = None,
    renders: list[ViewRender] | None = None,
    gt: InstanceSegmentation | None = None,
    gt_semantics: np.ndarray | None = None,
) -> SegmentationResult:
    """Run the full lifting pipeline on one scene.

    Stage toggles: no_init replaces the heuristic grouping by a single
    all-points instance as the refinement seed, no_em skips refinement,
    no_post skips the connected-component split. Precomputed renders or a
    partition may be passed in to share work across variants.
    """
    if config is None:
        config = PipelineConfig()

    if renders is None:
        try:
            renders = render_views(cloud, rig, config)
        except ValueError as e:
            raise StageError("render", str(e)) from e
    if partition is None:
        try:
            partition = build_partition(cloud, config)
        except ValueError as e:
            raise StageError("superpoints", str(e)) from e

    semantics = voting.vote(
        partition, renders, mask_set, assign_threshold=config.assign_threshold
    )
    point_semantic = voting.point_labels(semantics, partition)

    if config.no_init:
        initial = single_instance_init(partition, semantics)
    else:
        initial = grouping.group(
            partition, semantics, renders, mask_set, feature_threshold=config.feature_threshold
        )

    trace: list[TraceRow] = []
    if config.no_em or initial.n_instances == 0 or mask_set.m == 0:
        refined = initial
    else:
        refined, trace = em_mod.run_em(initial, partition, renders, mask_set, config.em)

    if config.no_post:
        final = refined
    else:
        final = em_mod.split_disconnected(
            refined, cloud, radius=config.split_radius, min_cluster=config.min_cluster
        )

    report = None
    if gt is not None:
        report = metrics.evaluate(
            final,
            gt,
            pred_semantics=point_semantic,
            gt_semantics=gt_semantics,
        )
    return SegmentationResult(
        partition=partition,
        semantics=semantics,
        point_semantic=point_semantic,
        initial=initial,
        refined=refined,
        final=final,
        trace=trace,
        report=report,
    )


def build_gt_segmentation(gt_category: np.ndarray, gt_instance: np.ndarray) -> InstanceSegmentation:
    """Instance segmentation object from per-point GT labels (confidence 1)."""
    gt_category = np.asarray(gt_category, dtype=np.int64)
    gt_instance = np.asarray(gt_instance, dtype=np.int64)
    instances = []
    point_instance = np.full(gt_instance.shape[0], grouping.NONE_INSTANCE, dtype=np.int64)
    for inst_id in np.unique(gt_instance[gt_instance >= 0]):
        pts = np.flatnonzero(gt_instance == inst_id)
        point_instance[pts] = len(instances)
        instances.append(
            Instance(category=int(gt_category[pts[0]]), points=pts, confidence=1.0)
        )
    return InstanceSegmentation(point_instance=point_instance, instances=instances)


ABLATION_CONFIGS = ("full", "no_em", "no_init", "no_post")


@dataclass
class AblationResult:
    per_scene: dict[str, list[EvalReport]]
    mean_map50: dict[str, float]
    mean_miou: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "mean_map50": self.mean_map50,
            "mean_miou": self.mean_miou,
            "per_scene": {
                name: [r.to_dict() for r in reports]
                for name, reports in self.per_scene.items()
            },
        }

    def to_text(self) -> str:
        lines = [f"{'config':>10} {'mAP@50':>8} {'mIoU':>8}"]
        for name in ABLATION_CONFIGS:
            lines.append(
                f"{name:>10} {self.mean_map50[name]:>8.4f} {self.mean_miou[name]:>8.4f}"
            )
        return "\n".join(lines)


def scene_masks(
    cloud: PointCloud,
    rig: list[CameraView],
    renders: list[ViewRender],
    gt_category: np.ndarray,
    gt_instance: np.ndarray,
    category_names: dict[int, str] | None = None,
    min_pixels: int = masks_mod.DEFAULT_MIN_PIXELS,
) -> MaskSet:
    """Exact ground-truth mask set over all rig views."""
    all_masks = []
    for render in renders:
        all_masks.extend(
            masks_mod.rasterize_ground_truth(gt_category, gt_instance, render, min_pixels=min_pixels)
        )
    return MaskSet(masks=all_masks, category_names=dict(category_names or {}))


def ablation_run(
    scene_batch: list[tuple[scenes.SceneSpec, list[CameraView]]],
    corruption: str | None = None,
    config: PipelineConfig | None = None,
    configs: tuple[str, ...] = ABLATION_CONFIGS,
) -> AblationResult:
    """Run the pipeline over a scene batch under each ablation variant.

    Masks are rasterized from GT and optionally corrupted; renders, the
    partition, and the votes are shared across variants of a scene.
    """
    if not scene_batch:
        raise ValueError("ablation requires at least one scene")
    base = config if config is not None else PipelineConfig()
    variants = {
        "full": base,
        "no_em": replace(base, no_em=True),
        "no_init": replace(base, no_init=True),
        "no_post": replace(base, no_post=True),
    }
    unknown = [c for c in configs if c not in variants]
    if unknown:
        raise ValueError(f"unknown ablation configs: {unknown}")

    per_scene: dict[str, list[EvalReport]] = {name: [] for name in configs}
    for spec, rig in scene_batch:
        cloud, gt_cat, gt_inst = scenes.generate(spec)
        renders = render_views(cloud, rig, base)
        mask_set = scene_masks(cloud, rig, renders, gt_cat, gt_inst)
        if corruption is not None:
            mask_set = masks_mod.corrupt(mask_set, corruption, seed=base.seed)
        partition = build_partition(cloud, base)
        gt_seg = build_gt_segmentation(gt_cat, gt_inst)
        for name in configs:
            result = segment_scene(
                cloud,
                rig,
                mask_set,
                config=variants[name],
                partition=partition,
                renders=renders,
                gt=gt_seg,
                gt_semantics=gt_cat,
            )
            per_scene[name].append(result.report)
    return AblationResult(
        per_scene=per_scene,
        mean_map50={n: float(np.mean([r.map50 for r in per_scene[n]])) for n in configs},
        mean_miou={n: float(np.mean([r.miou for r in per_scene[n]])) for n in configs},
    )
