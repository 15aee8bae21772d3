"""Oversegmentation of a point cloud into superpoints.

Superpoints are grown greedily over a k-nearest-neighbor graph: an edge
merges its endpoints when their normals and colors are similar enough.
Each superpoint is the labeling unit for everything downstream, under the
assumption that it never straddles a part instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import cKDTree

from .errors import PipelineError
from .geometry import PointCloud

DEFAULT_NORMAL_ANGLE_MAX = 30.0
DEFAULT_COLOR_DIST_MAX = 0.2
DEFAULT_SPATIAL_KNN = 16
DEFAULT_MIN_SIZE = 10


@dataclass
class SuperpointPartition:
    """Disjoint cover of a cloud by superpoints.

    assignment: (n,) int64, superpoint id per point (contiguous from 0).
    superpoints: per-superpoint sorted arrays of point indices.
    adjacency: per-superpoint sorted arrays of neighboring superpoint ids
        (irreflexive, symmetric), induced by KNN edges between points of
        different superpoints.
    """

    assignment: np.ndarray
    superpoints: list[np.ndarray]
    adjacency: list[np.ndarray]

    @property
    def n_superpoints(self) -> int:
        return len(self.superpoints)

    @property
    def n_points(self) -> int:
        return self.assignment.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(sp) for sp in self.superpoints], dtype=np.int64)


def knn_edges(positions: np.ndarray, k: int) -> np.ndarray:
    """Undirected KNN edge list (m, 2), deduplicated, row < col."""
    n = positions.shape[0]
    k_eff = min(k, n - 1)
    if k_eff < 1:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(positions)
    _, nbr = tree.query(positions, k=k_eff + 1)
    nbr = np.atleast_2d(nbr)
    src = np.repeat(np.arange(n, dtype=np.int64), k_eff)
    dst = nbr[:, 1:].astype(np.int64).ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return edges[edges[:, 0] != edges[:, 1]]


def _components_to_partition(
    n: int, labels: np.ndarray, edges: np.ndarray
) -> SuperpointPartition:
    """Relabel components contiguously (by first point index) and build
    the superpoint adjacency from cross-component edges."""
    first_seen = {}
    remap = np.empty(n, dtype=np.int64)
    next_id = 0
    for p in range(n):
        lbl = labels[p]
        if lbl not in first_seen:
            first_seen[lbl] = next_id
            next_id += 1
        remap[p] = first_seen[lbl]
    n_sp = next_id
    superpoints = [np.flatnonzero(remap == i) for i in range(n_sp)]

    adjacency = [set() for _ in range(n_sp)]
    if edges.size:
        ea = remap[edges[:, 0]]
        eb = remap[edges[:, 1]]
        cross = ea != eb
        for a, b in zip(ea[cross], eb[cross]):
            adjacency[a].add(int(b))
            adjacency[b].add(int(a))
    adj = [np.array(sorted(s), dtype=np.int64) for s in adjacency]
    return SuperpointPartition(assignment=remap, superpoints=superpoints, adjacency=adj)


def oversegment(
    cloud: PointCloud,
    normal_angle_max: float = DEFAULT_NORMAL_ANGLE_MAX,
    color_dist_max: float = DEFAULT_COLOR_DIST_MAX,
    spatial_knn: int = DEFAULT_SPATIAL_KNN,
    min_size: int = DEFAULT_MIN_SIZE,
) -> SuperpointPartition:
    """Region-grow superpoints over the point KNN graph.

    An edge (p, q) merges iff the angle between the normals is at most
    ``normal_angle_max`` degrees and the color distance is at most
    ``color_dist_max``; either check is skipped when its threshold is
    infinite. Components smaller than ``min_size`` are absorbed into the
    neighboring component they share the most KNN edges with.
    """
    if spatial_knn < 1:
        raise ValueError("spatial_knn must be >= 1")
    if math.isfinite(normal_angle_max) and cloud.normals is None:
        raise PipelineError("cloud has no normals but a finite normal_angle_max was given")
    if math.isfinite(color_dist_max) and cloud.colors is None:
        raise PipelineError("cloud has no colors but a finite color_dist_max was given")

    n = cloud.n
    edges = knn_edges(cloud.positions, spatial_knn)

    merge = np.ones(edges.shape[0], dtype=bool)
    if edges.size and math.isfinite(normal_angle_max):
        dots = np.sum(cloud.normals[edges[:, 0]] * cloud.normals[edges[:, 1]], axis=1)
        angles = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
        merge &= angles <= normal_angle_max
    if edges.size and math.isfinite(color_dist_max):
        cdist = np.linalg.norm(cloud.colors[edges[:, 0]] - cloud.colors[edges[:, 1]], axis=1)
        merge &= cdist <= color_dist_max

    ds = DisjointSet(range(n))
    for a, b in edges[merge]:
        ds.merge(int(a), int(b))

    labels = np.fromiter((ds[int(p)] for p in range(n)), dtype=np.int64, count=n)

    if min_size > 1 and edges.size:
        labels = _absorb_small_components(labels, edges, min_size)

    return _components_to_partition(n, labels, edges)


def _absorb_small_components(labels: np.ndarray, edges: np.ndarray, min_size: int) -> np.ndarray:
    """Merge undersized components into the neighbor they touch most.

    Components are handled smallest-first (ties by label); the target is
    the neighbor with the largest cross-edge count (ties by lower label).
    Absorption repeats until every remaining component either meets
    min_size or has no neighbors at all.
    """
    labels = labels.copy()
    uniq, counts = np.unique(labels, return_counts=True)
    size_of = dict(zip(uniq.tolist(), counts.tolist()))
    ea = labels[edges[:, 0]].copy()
    eb = labels[edges[:, 1]].copy()
    stuck: set[int] = set()
    while True:
        candidates = [
            (c, l) for l, c in size_of.items() if c < min_size and l not in stuck
        ]
        if not candidates:
            return labels
        _, lbl = min(candidates)
        sel_a = ea == lbl
        sel_b = eb == lbl
        neighbors = np.concatenate([eb[sel_a], ea[sel_b]])
        neighbors = neighbors[neighbors != lbl]
        if neighbors.size == 0:
            stuck.add(lbl)
            continue
        ids, cnts = np.unique(neighbors, return_counts=True)
        target = int(ids[np.lexsort((ids, -cnts))][0])
        labels[labels == lbl] = target
        ea[sel_a] = target
        eb[sel_b] = target
        size_of[target] += size_of.pop(lbl)
        stuck.discard(target)


def identity_partition(cloud: PointCloud, spatial_knn: int = DEFAULT_SPATIAL_KNN) -> SuperpointPartition:
    """One singleton superpoint per point; adjacency is the point KNN graph."""
    n = cloud.n
    edges = knn_edges(cloud.positions, spatial_knn)
    return _components_to_partition(n, np.arange(n, dtype=np.int64), edges)


def save_partition(path, partition: SuperpointPartition) -> None:
    """Newline-delimited superpoint id of each point, in point order."""
    with open(path, "w") as f:
        f.write("\n".join(str(int(i)) for i in partition.assignment))
        f.write("\n")


def load_partition(path, cloud: PointCloud, spatial_knn: int = DEFAULT_SPATIAL_KNN) -> SuperpointPartition:
    """Read a partition file; ids are deduplicated to contiguous 0-based ids
    and adjacency is rebuilt from the cloud's KNN graph."""
    with open(path) as f:
        raw = [line.strip() for line in f if line.strip()]
    if len(raw) != cloud.n:
        raise PipelineError(
            f"{path}: has {len(raw)} entries but the cloud has {cloud.n} points"
        )
    try:
        ids = np.array([int(x) for x in raw], dtype=np.int64)
    except ValueError as e:
        raise PipelineError(f"{path}: non-integer superpoint id ({e})") from None
    if ids.min() < 0:
        raise PipelineError(f"{path}: negative superpoint ids are not allowed")
    edges = knn_edges(cloud.positions, spatial_knn)
    return _components_to_partition(cloud.n, ids, edges)
