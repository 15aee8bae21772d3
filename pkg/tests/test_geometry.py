import numpy as np
import pytest

from partlift.geometry import (
    CameraView,
    PointCloud,
    generate_camera_rig,
    load_rig,
    project_point,
    project_points,
    render_visibility,
    save_rig,
)


def identity_view(fx=100.0, fy=100.0, cx=64.0, cy=64.0, h=128, w=128, view_id=0):
    return CameraView(
        view_id=view_id,
        rotation=np.eye(3),
        translation=np.zeros(3),
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        height=h,
        width=w,
    )


class TestProjection:
    def test_point_on_optical_axis_hits_principal_point(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 2.0]]))
        view = identity_view()
        u, v, z = project_point(cloud, view, 0)
        assert (u, v, z) == (64.0, 64.0, 2.0)

    def test_hand_evaluated_pinhole(self):
        cloud = PointCloud(np.array([[0.1, 0.0, 1.0]]))
        u, v, z = project_point(cloud, identity_view(), 0)
        assert u == pytest.approx(74.0, abs=1e-12)
        assert v == pytest.approx(64.0, abs=1e-12)
        assert z == pytest.approx(1.0, abs=1e-12)

    def test_zero_depth_is_behind_camera(self):
        cloud = PointCloud(np.array([[0.3, 0.2, 0.0]]))
        assert project_point(cloud, identity_view(), 0) is None

    def test_index_out_of_range(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(ValueError):
            project_point(cloud, identity_view(), 3)


def brute_force_render(cloud, view, splat_radius, depth_tolerance):
    """Per-pixel depth comparison oracle, all loops."""
    h, w = view.height, view.width
    u, v, z, valid = project_points(cloud, view)
    candidates = {}  # pixel -> list of (z, point)
    for p in range(cloud.n):
        if not valid[p]:
            continue
        r0, c0 = int(np.rint(v[p])), int(np.rint(u[p]))
        for dr in range(-splat_radius, splat_radius + 1):
            for dc in range(-splat_radius, splat_radius + 1):
                if dr * dr + dc * dc > splat_radius * splat_radius:
                    continue
                r, c = r0 + dr, c0 + dc
                if 0 <= r < h and 0 <= c < w:
                    candidates.setdefault((r, c), []).append((z[p], p))
    depth = np.full((h, w), np.inf)
    winner = np.full((h, w), -1, dtype=np.int64)
    visible = np.zeros(cloud.n, dtype=bool)
    for (r, c), entries in candidates.items():
        entries.sort()
        depth[r, c], winner[r, c] = entries[0]
    for (r, c), entries in candidates.items():
        for zz, p in entries:
            if zz - depth[r, c] <= depth_tolerance:
                visible[p] = True
    return winner, depth, visible


class TestRenderVisibility:
    def test_occlusion_on_shared_ray(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]]))
        render = render_visibility(cloud, identity_view(), splat_radius=1, depth_tolerance=0.01)
        assert render.visible[0] and not render.visible[1]

    def test_single_point_owns_exactly_its_splat(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]))
        render = render_visibility(cloud, identity_view(), splat_radius=1, depth_tolerance=0.01)
        assert render.visible[0]
        rows, cols = np.nonzero(render.pixel_to_point == 0)
        expected = {(64, 64), (63, 64), (65, 64), (64, 63), (64, 65)}
        assert set(zip(rows.tolist(), cols.tolist())) == expected

    def test_random_cloud_matches_brute_force(self):
        rng = np.random.default_rng(42)
        pts = rng.uniform(-0.4, 0.4, size=(100, 3)) + [0.0, 0.0, 2.0]
        cloud = PointCloud(pts)
        view = identity_view()
        for splat in (0, 1, 2):
            render = render_visibility(cloud, view, splat_radius=splat, depth_tolerance=0.01)
            winner, depth, visible = brute_force_render(cloud, view, splat, 0.01)
            np.testing.assert_array_equal(render.pixel_to_point, winner)
            np.testing.assert_array_equal(render.visible, visible)
            occ = winner >= 0
            np.testing.assert_allclose(render.depth[occ], depth[occ])
            assert np.all(np.isinf(render.depth[~occ]))

    def test_separated_points_all_visible(self):
        rng = np.random.default_rng(7)
        # spread points so no two share a pixel (grid with jitter far smaller than spacing)
        g = np.stack(np.meshgrid(np.arange(10), np.arange(10)), axis=-1).reshape(-1, 2)
        pts = np.column_stack([g * 0.08 - 0.4 + rng.uniform(-0.001, 0.001, (100, 2)), np.full(100, 2.0)])
        cloud = PointCloud(pts)
        render = render_visibility(cloud, identity_view(), splat_radius=0, depth_tolerance=0.01)
        assert render.visible.all()

    def test_tolerance_monotonicity(self):
        rng = np.random.default_rng(3)
        cloud = PointCloud(rng.uniform(-0.3, 0.3, size=(200, 3)) + [0, 0, 2.0])
        view = identity_view()
        loose = render_visibility(cloud, view, splat_radius=1, depth_tolerance=0.05)
        tight = render_visibility(cloud, view, splat_radius=1, depth_tolerance=0.005)
        # shrinking the tolerance never makes an invisible point visible
        assert not np.any(tight.visible & ~loose.visible)

    def test_reprojection_consistency(self):
        rng = np.random.default_rng(11)
        cloud = PointCloud(rng.uniform(-0.3, 0.3, size=(150, 3)) + [0, 0, 2.0])
        view = identity_view()
        splat = 1
        render = render_visibility(cloud, view, splat_radius=splat, depth_tolerance=0.01)
        u, v, _, _ = project_points(cloud, view)
        rows, cols = np.nonzero(render.pixel_to_point >= 0)
        pts = render.pixel_to_point[rows, cols]
        # max per-axis distance from the recorded point's projection to the pixel
        assert np.all(np.abs(u[pts] - cols) <= splat + 0.5)
        assert np.all(np.abs(v[pts] - rows) <= splat + 0.5)

    def test_winners_are_visible(self):
        rng = np.random.default_rng(5)
        cloud = PointCloud(rng.uniform(-0.3, 0.3, size=(300, 3)) + [0, 0, 2.0])
        render = render_visibility(cloud, identity_view(), splat_radius=1, depth_tolerance=0.01)
        winners = render.pixel_to_point[render.pixel_to_point >= 0]
        assert render.visible[winners].all()


class TestCameraRig:
    def test_single_camera_convention(self):
        (view,) = generate_camera_rig(count=1, radius=3.0)
        np.testing.assert_allclose(view.camera_center(), [0.0, 0.0, 3.0], atol=1e-12)
        # looks at the origin: the origin projects to the principal point
        cloud = PointCloud(np.zeros((1, 3)))
        u, v, z = project_point(cloud, view, 0)
        assert u == pytest.approx(view.cx) and v == pytest.approx(view.cy)
        assert z == pytest.approx(3.0)

    def test_default_rig_has_ten_distinct_poses(self):
        rig = generate_camera_rig()
        assert len(rig) == 10
        centers = np.array([v.camera_center() for v in rig])
        d = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
        assert d[~np.eye(10, dtype=bool)].min() > 0

    def test_rotations_orthonormal(self):
        for view in generate_camera_rig(count=10, radius=2.5):
            r = view.rotation
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-6
            assert abs(np.linalg.det(r) - 1.0) < 1e-6

    def test_rig_determinism(self):
        a = generate_camera_rig(count=7, radius=2.0, elevation_rings=2)
        b = generate_camera_rig(count=7, radius=2.0, elevation_rings=2)
        for va, vb in zip(a, b):
            np.testing.assert_array_equal(va.rotation, vb.rotation)
            np.testing.assert_array_equal(va.translation, vb.translation)

    def test_camera_distance_matches_radius(self):
        for view in generate_camera_rig(count=6, radius=2.5):
            assert np.linalg.norm(view.camera_center()) == pytest.approx(2.5)

    def test_rig_json_round_trip(self, tmp_path):
        rig = generate_camera_rig(count=5)
        path = tmp_path / "rig.json"
        save_rig(path, rig)
        loaded = load_rig(path)
        assert len(loaded) == 5
        for a, b in zip(rig, loaded):
            assert a.view_id == b.view_id
            np.testing.assert_array_equal(a.rotation, b.rotation)
            np.testing.assert_array_equal(a.translation, b.translation)
            assert (a.fx, a.fy, a.cx, a.cy, a.height, a.width) == (
                b.fx, b.fy, b.cx, b.cy, b.height, b.width,
            )


class TestValidation:
    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))

    def test_nonfinite_positions_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, np.nan, 0.0]]))

    def test_unnormalized_normals_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((1, 3)) + 1.0, normals=np.array([[1.0, 1.0, 0.0]]))

    def test_non_orthonormal_rotation_rejected(self):
        with pytest.raises(ValueError):
            CameraView(0, np.eye(3) * 2.0, np.zeros(3), 100, 100, 64, 64, 128, 128)

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            CameraView(0, r, np.zeros(3), 100, 100, 64, 64, 128, 128)
