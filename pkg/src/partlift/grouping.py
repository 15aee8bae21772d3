"""Heuristic grouping of superpoints into 3D part instances.

Two adjacent superpoints with the same semantic label merge when their
per-mask coverage profiles agree across the views where both are visible;
union-find over all merges yields the instances. This is the cheap
initializer that the refinement stage later improves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from .errors import PipelineError
from .geometry import ViewRender
from .masks import InstanceMask2D, MaskSet
from .superpoints import SuperpointPartition
from .voting import UNASSIGNED, SemanticScores

DEFAULT_FEATURE_THRESHOLD = 0.3

NONE_INSTANCE = -1


@dataclass
class Instance:
    category: int
    points: np.ndarray  # sorted point indices
    confidence: float


@dataclass
class InstanceSegmentation:
    """Per-point instance labels plus per-instance category and confidence.

    point_instance: (n,) int64 with NONE_INSTANCE (-1) for unlabeled points;
    instances[i] describes instance id i.
    """

    point_instance: np.ndarray
    instances: list[Instance] = field(default_factory=list)

    @property
    def n_points(self) -> int:
        return self.point_instance.shape[0]

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    def point_categories(self) -> np.ndarray:
        """Per-point category derived from instance membership (-1 where none)."""
        cats = np.full(self.n_points, -1, dtype=np.int64)
        for i, inst in enumerate(self.instances):
            cats[self.point_instance == i] = inst.category
        return cats


def overlap(
    superpoint: np.ndarray, mask: InstanceMask2D, render: ViewRender
) -> float | None:
    """Fraction of the superpoint's visible points whose projection falls
    inside the mask; None (undefined) when no point is visible in the view."""
    pts = np.asarray(superpoint, dtype=np.int64)
    vis = render.visible[pts]
    denom = int(vis.sum())
    if denom == 0:
        return None
    inside = render.points_in_mask(mask.bitmap)[pts]
    return float((inside & vis).sum() / denom)


def _coverage_tables(
    partition: SuperpointPartition, renders: list[ViewRender], masks: MaskSet
) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """vis_count[s, v]: visible points of superpoint s in render v;
    inside_count[s, m]: of those, how many fall inside mask m."""
    n_sp = partition.n_superpoints
    sp_of = partition.assignment
    view_index = {r.view_id: i for i, r in enumerate(renders)}
    vis_count = np.zeros((n_sp, len(renders)), dtype=np.int64)
    for i, render in enumerate(renders):
        vis_count[:, i] = np.bincount(sp_of[render.visible], minlength=n_sp)
    inside_count = np.zeros((n_sp, masks.m), dtype=np.int64)
    for mi, mask in enumerate(masks.masks):
        render = renders[view_index[mask.view_id]]
        hit = render.points_in_mask(mask.bitmap) & render.visible
        inside_count[:, mi] = np.bincount(sp_of[hit], minlength=n_sp)
    return vis_count, inside_count, view_index


def merge_predicate(
    u: int,
    v: int,
    category: int,
    masks: MaskSet,
    vis_count: np.ndarray,
    inside_count: np.ndarray,
    view_index: dict[int, int],
    feature_threshold: float,
) -> bool:
    """Coverage-profile agreement between two superpoints of one category.

    Builds the feature vectors over category masks from views where both
    superpoints are visible and compares their normalized L1 distance to
    the threshold. Empty mask lists and all-zero profiles never merge.
    """
    mask_ids = [
        mi
        for mi, m in enumerate(masks.masks)
        if m.category == category
        and vis_count[u, view_index[m.view_id]] > 0
        and vis_count[v, view_index[m.view_id]] > 0
    ]
    if not mask_ids:
        return False
    cols = np.asarray(mask_ids, dtype=np.int64)
    views = np.asarray([view_index[masks.masks[mi].view_id] for mi in mask_ids])
    feat_u = inside_count[u, cols] / vis_count[u, views]
    feat_v = inside_count[v, cols] / vis_count[v, views]
    norm = max(np.abs(feat_u).sum(), np.abs(feat_v).sum())
    if norm == 0:
        return False
    return float(np.abs(feat_u - feat_v).sum() / norm) < feature_threshold


def group(
    partition: SuperpointPartition,
    semantics: SemanticScores,
    renders: list[ViewRender],
    masks: MaskSet,
    feature_threshold: float = DEFAULT_FEATURE_THRESHOLD,
) -> InstanceSegmentation:
    """Union-find merge of same-label adjacent superpoints whose multi-view
    coverage profiles agree; every labeled superpoint lands in exactly one
    instance, unassigned superpoints stay out.

    Instance confidence is the size-weighted mean of the members' semantic
    scores for the shared category.
    """
    if not 0 < feature_threshold <= 2:
        raise ValueError("feature_threshold must be in (0, 2]")
    n_sp = partition.n_superpoints
    labels = semantics.labels
    vis_count, inside_count, view_index = _coverage_tables(partition, renders, masks)

    ds = DisjointSet(range(n_sp))
    for u in range(n_sp):
        for v in partition.adjacency[u]:
            if v <= u:
                continue
            if labels[u] == UNASSIGNED or labels[u] != labels[v]:
                continue
            if merge_predicate(
                u, int(v), int(labels[u]), masks, vis_count, inside_count,
                view_index, feature_threshold,
            ):
                ds.merge(u, int(v))

    sizes = partition.sizes
    root_to_instance: dict[int, int] = {}
    members: list[list[int]] = []
    for s in range(n_sp):
        if labels[s] == UNASSIGNED:
            continue
        root = ds[s]
        if root not in root_to_instance:
            root_to_instance[root] = len(members)
            members.append([])
        members[root_to_instance[root]].append(s)

    point_instance = np.full(partition.n_points, NONE_INSTANCE, dtype=np.int64)
    instances = []
    for inst_id, sps in enumerate(members):
        cat = int(labels[sps[0]])
        w = sizes[sps].astype(np.float64)
        conf = float(np.sum(w * semantics.scores[sps, cat]) / np.sum(w))
        pts = np.sort(np.concatenate([partition.superpoints[s] for s in sps]))
        point_instance[pts] = inst_id
        instances.append(Instance(category=cat, points=pts, confidence=conf))
    return InstanceSegmentation(point_instance=point_instance, instances=instances)


def save_instances(path, seg: InstanceSegmentation) -> None:
    doc = {
        "instances": [
            {"id": i, "category_id": inst.category, "confidence": inst.confidence}
            for i, inst in enumerate(seg.instances)
        ],
        "point_instance": [int(x) for x in seg.point_instance],
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_instances(path) -> InstanceSegmentation:
    with open(path) as f:
        doc = json.load(f)
    try:
        point_instance = np.asarray(doc["point_instance"], dtype=np.int64)
        entries = doc["instances"]
    except (KeyError, TypeError, ValueError) as e:
        raise PipelineError(f"{path}: bad instance segmentation schema ({e})") from None
    instances = []
    for i, entry in enumerate(entries):
        if int(entry["id"]) != i:
            raise PipelineError(f"{path}: instance ids must be 0-based and in order")
        pts = np.flatnonzero(point_instance == i)
        instances.append(
            Instance(
                category=int(entry["category_id"]),
                points=pts,
                confidence=float(entry["confidence"]),
            )
        )
    if seg_has_stray_ids(point_instance, len(instances)):
        raise PipelineError(f"{path}: point_instance references undeclared instance ids")
    return InstanceSegmentation(point_instance=point_instance, instances=instances)


def seg_has_stray_ids(point_instance: np.ndarray, n_instances: int) -> bool:
    ids = point_instance[point_instance != NONE_INSTANCE]
    return bool(ids.size and (ids.min() < 0 or ids.max() >= n_instances))
