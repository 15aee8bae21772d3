import numpy as np
import pytest
from scipy.cluster.hierarchy import DisjointSet

from partlift.errors import PipelineError
from partlift.geometry import PointCloud
from partlift.superpoints import (
    identity_partition,
    knn_edges,
    load_partition,
    oversegment,
    save_partition,
)


def grid_plane(nx=10, ny=10, z=0.0, spacing=0.1, color=(0.5, 0.5, 0.5)):
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    pos = np.column_stack([xs.ravel(), ys.ravel(), np.full(nx * ny, z)])
    colors = np.tile(color, (nx * ny, 1))
    normals = np.tile([0.0, 0.0, 1.0], (nx * ny, 1))
    return pos, colors, normals


def check_partition_laws(partition):
    n = partition.n_points
    seen = np.zeros(n, dtype=bool)
    for i, sp in enumerate(partition.superpoints):
        assert sp.size > 0
        assert not seen[sp].any(), "superpoints overlap"
        seen[sp] = True
        assert np.all(partition.assignment[sp] == i)
    assert seen.all(), "superpoints do not cover the cloud"
    for i, nbrs in enumerate(partition.adjacency):
        assert i not in nbrs
        for j in nbrs:
            assert i in partition.adjacency[j]


def brute_force_components(cloud, normal_angle_max, color_dist_max, k):
    """Connected components of the thresholded KNN graph, by union-find."""
    edges = knn_edges(cloud.positions, k)
    ds = DisjointSet(range(cloud.n))
    for a, b in edges:
        ok = True
        if np.isfinite(normal_angle_max):
            dot = np.clip(np.dot(cloud.normals[a], cloud.normals[b]), -1, 1)
            ok &= np.degrees(np.arccos(dot)) <= normal_angle_max
        if np.isfinite(color_dist_max):
            ok &= np.linalg.norm(cloud.colors[a] - cloud.colors[b]) <= color_dist_max
        if ok:
            ds.merge(int(a), int(b))
    return {frozenset(int(i) for i in s) for s in ds.subsets()}


class TestOversegment:
    def test_two_disconnected_planes(self):
        p1, c1, n1 = grid_plane(z=0.0)
        p2, c2, n2 = grid_plane(z=1.0)
        cloud = PointCloud(
            np.vstack([p1, p2]), colors=np.vstack([c1, c2]), normals=np.vstack([n1, n2])
        )
        part = oversegment(cloud, spatial_knn=4, min_size=1)
        assert part.n_superpoints == 2
        check_partition_laws(part)

    def test_color_seam_matches_brute_force(self):
        pos, colors, normals = grid_plane(nx=12, ny=8)
        colors[pos[:, 0] > 0.55] = [0.9, 0.1, 0.1]  # solid halves
        cloud = PointCloud(pos, colors=colors, normals=normals)
        part = oversegment(cloud, color_dist_max=0.2, spatial_knn=4, min_size=1)
        got = {frozenset(int(i) for i in sp) for sp in part.superpoints}
        want = brute_force_components(cloud, 30.0, 0.2, 4)
        assert got == want
        assert len(got) == 2

    def test_infinite_thresholds_give_one_superpoint(self):
        pos, _, _ = grid_plane()
        cloud = PointCloud(pos)  # no colors or normals needed
        part = oversegment(
            cloud, normal_angle_max=np.inf, color_dist_max=np.inf, spatial_knn=4, min_size=1
        )
        assert part.n_superpoints == 1

    def test_missing_normals_raises(self):
        pos, colors, _ = grid_plane()
        cloud = PointCloud(pos, colors=colors)
        with pytest.raises(PipelineError):
            oversegment(cloud, normal_angle_max=30.0, color_dist_max=np.inf)

    def test_missing_colors_raises(self):
        pos, _, normals = grid_plane()
        cloud = PointCloud(pos, normals=normals)
        with pytest.raises(PipelineError):
            oversegment(cloud, normal_angle_max=np.inf, color_dist_max=0.2)

    def test_small_components_absorbed(self):
        pos, colors, normals = grid_plane(nx=10, ny=10)
        # a 2x1 odd-colored blip inside the plane
        blip = (pos[:, 0] < 0.15) & (pos[:, 1] < 0.05)
        assert blip.sum() == 2
        colors[blip] = [0.0, 0.0, 1.0]
        cloud = PointCloud(pos, colors=colors, normals=normals)
        part = oversegment(cloud, color_dist_max=0.2, spatial_knn=4, min_size=5)
        assert part.n_superpoints == 1

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 1, (200, 3))
        raw = rng.normal(size=(200, 3))
        normals = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        colors = rng.uniform(0, 1, (200, 3))
        cloud = PointCloud(pos, colors=colors, normals=normals)
        a = oversegment(cloud, spatial_knn=6, min_size=3)
        b = oversegment(cloud, spatial_knn=6, min_size=3)
        np.testing.assert_array_equal(a.assignment, b.assignment)

    def test_partition_laws_on_random_cloud(self):
        rng = np.random.default_rng(1)
        pos = rng.uniform(0, 1, (300, 3))
        raw = rng.normal(size=(300, 3))
        normals = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        colors = rng.uniform(0, 1, (300, 3))
        cloud = PointCloud(pos, colors=colors, normals=normals)
        part = oversegment(cloud, spatial_knn=8, min_size=4)
        check_partition_laws(part)


class TestIdentityPartition:
    def test_singletons(self):
        cloud = PointCloud(np.random.default_rng(0).uniform(0, 1, (5, 3)))
        part = identity_partition(cloud, spatial_knn=2)
        assert part.n_superpoints == 5
        np.testing.assert_array_equal(part.assignment, np.arange(5))
        assert sum(sp.size for sp in part.superpoints) == 5
        check_partition_laws(part)

    def test_adjacency_is_knn_graph(self):
        rng = np.random.default_rng(2)
        cloud = PointCloud(rng.uniform(0, 1, (30, 3)))
        part = identity_partition(cloud, spatial_knn=3)
        edges = {(min(a, b), max(a, b)) for a, b in knn_edges(cloud.positions, 3)}
        got = set()
        for i, nbrs in enumerate(part.adjacency):
            for j in nbrs:
                got.add((min(i, int(j)), max(i, int(j))))
        assert got == edges


class TestPartitionFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        cloud = PointCloud(rng.uniform(0, 1, (40, 3)))
        part = identity_partition(cloud, spatial_knn=3)
        path = tmp_path / "partition.txt"
        save_partition(path, part)
        loaded = load_partition(path, cloud, spatial_knn=3)
        np.testing.assert_array_equal(loaded.assignment, part.assignment)

    def test_non_contiguous_ids_are_remapped(self, tmp_path):
        cloud = PointCloud(np.random.default_rng(4).uniform(0, 1, (4, 3)))
        path = tmp_path / "partition.txt"
        path.write_text("7\n7\n3\n3\n")
        loaded = load_partition(path, cloud, spatial_knn=1)
        np.testing.assert_array_equal(loaded.assignment, [0, 0, 1, 1])

    def test_length_mismatch(self, tmp_path):
        cloud = PointCloud(np.zeros((3, 3)) + 0.5)
        path = tmp_path / "partition.txt"
        path.write_text("0\n1\n")
        with pytest.raises(PipelineError):
            load_partition(path, cloud)

    def test_negative_ids_rejected(self, tmp_path):
        cloud = PointCloud(np.zeros((2, 3)) + 0.5)
        path = tmp_path / "partition.txt"
        path.write_text("0\n-2\n")
        with pytest.raises(PipelineError):
            load_partition(path, cloud)
