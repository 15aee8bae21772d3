"""Per-superpoint semantic scores from multi-view mask coverage.

For superpoint i and category j the score is the fraction of visible-point
observations covered by a category-j mask:

    s[i, j] = sum_k sum_{p in SP_i} vis_k(p) * covered_kj(p)
              -----------------------------------------------
              sum_k sum_{p in SP_i} vis_k(p)

where covered_kj(p) is true iff the rounded projection of p in view k lies
inside at least one category-j mask of that view. Occluded points count in
neither sum. The denominator runs over every rendered view, with or
without masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ViewRender
from .masks import MaskSet
from .superpoints import SuperpointPartition

UNASSIGNED = -1


@dataclass
class SemanticScores:
    """scores: (n_superpoints, n_categories) in [0, 1]; labels: per-superpoint
    category id, UNASSIGNED (-1) for superpoints below the assign threshold
    or without any visible point."""

    scores: np.ndarray
    labels: np.ndarray

    @property
    def n_categories(self) -> int:
        return self.scores.shape[1]


def vote(
    partition: SuperpointPartition,
    renders: list[ViewRender],
    masks: MaskSet,
    n_categories: int | None = None,
    assign_threshold: float = 0.0,
) -> SemanticScores:
    """Aggregate mask coverage of visible points into superpoint scores.

    Every render contributes to the visibility denominator. The label is
    the argmax category (ties to the lower id) when the best score reaches
    ``assign_threshold``; superpoints visible nowhere get all-zero scores
    and UNASSIGNED.
    """
    have = {r.view_id for r in renders}
    missing = [v for v in masks.view_ids if v not in have]
    if missing:
        raise ValueError(f"masks reference views without renders: {missing}")

    if n_categories is None:
        n_categories = (max(masks.categories) + 1) if masks.masks else 0
    n_sp = partition.n_superpoints
    sp_of = partition.assignment

    numer = np.zeros((n_sp, n_categories), dtype=np.float64)
    denom = np.zeros(n_sp, dtype=np.float64)
    for render in renders:
        vis = render.visible
        denom += np.bincount(sp_of[vis], minlength=n_sp)
        for cat in masks.categories:
            coverage = None
            for mask in masks.in_view(render.view_id):
                if mask.category != cat:
                    continue
                coverage = mask.bitmap if coverage is None else (coverage | mask.bitmap)
            if coverage is None:
                continue
            inside = render.points_in_mask(coverage) & vis
            numer[:, cat] += np.bincount(sp_of[inside], minlength=n_sp)

    scores = np.zeros((n_sp, n_categories), dtype=np.float64)
    seen = denom > 0
    scores[seen] = numer[seen] / denom[seen, None]

    labels = np.full(n_sp, UNASSIGNED, dtype=np.int64)
    if n_categories > 0:
        best = np.argmax(scores, axis=1)  # ties resolve to the lower id
        best_score = scores[np.arange(n_sp), best]
        assign = seen & (best_score >= assign_threshold)
        labels[assign] = best[assign]
    return SemanticScores(scores=scores, labels=labels)


def point_labels(scores: SemanticScores, partition: SuperpointPartition) -> np.ndarray:
    """Broadcast superpoint labels to points (UNASSIGNED propagates)."""
    return scores.labels[partition.assignment]


def save_scores_csv(path, scores: SemanticScores) -> None:
    with open(path, "w") as f:
        f.write("superpoint_id,category_id,score\n")
        for i in range(scores.scores.shape[0]):
            for j in range(scores.scores.shape[1]):
                f.write(f"{i},{j},{scores.scores[i, j]!r}\n")


def save_labels(path, labels: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("\n".join(str(int(l)) for l in labels))
        f.write("\n")
