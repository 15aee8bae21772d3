"""Point clouds, pinhole cameras, and z-buffer visibility rendering.

Coordinate conventions (OpenCV style):

World frame: right-handed, Y up. Objects are normalized to fit the unit
cube centered at the origin; cameras sit on a sphere around it.

Camera frame: right-handed, X right, Y down, Z forward. A world point is
mapped into the camera by ``x_cam = R @ x_world + t`` and projected by

    u = fx * x_cam / z_cam + cx
    v = fy * y_cam / z_cam + cy

Image frame: ``u`` grows right (column), ``v`` grows down (row), origin at
the top-left pixel. Points with ``z_cam <= z_near`` are behind the camera.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

Z_NEAR = 1e-4
DEFAULT_SPLAT_RADIUS = 1
DEFAULT_DEPTH_TOLERANCE = 0.01


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass
class PointCloud:
    """Colored, optionally oriented point cloud.

    positions: (n, 3) float64, finite.
    colors: (n, 3) float64 in [0, 1], or None.
    normals: (n, 3) float64 unit vectors, or None.
    """

    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (n, 3) with n >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        self.positions = _freeze(pos)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64)
            if col.shape != pos.shape:
                raise ValueError("colors must match positions shape")
            if col.min() < -1e-9 or col.max() > 1 + 1e-9:
                raise ValueError("colors must lie in [0, 1]")
            self.colors = _freeze(np.clip(col, 0.0, 1.0))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pos.shape:
                raise ValueError("normals must match positions shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise ValueError("normals must be unit length (within 1e-6)")
            self.normals = _freeze(nrm)

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass
class CameraView:
    """Pinhole camera: world-to-camera pose plus intrinsics."""

    view_id: int
    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal (residual > 1e-6)")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be at least 1x1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.rotation = _freeze(r)
        self.translation = _freeze(t)

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.height, self.width)

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation


@dataclass
class ViewRender:
    """Z-buffer rendering of a cloud in one view.

    pixel_to_point: (H, W) int64, winning point index per pixel, -1 empty.
    depth: (H, W) float64, camera-space z of the winner, +inf where empty.
    visible: (n,) bool, per-point visibility flag.
    point_row / point_col: (n,) int64 rounded projected pixel of each point
        (may lie outside the image); meaningful only where point_valid.
    point_valid: (n,) bool, point projects in front of the camera.
    """

    view_id: int
    pixel_to_point: np.ndarray
    depth: np.ndarray
    visible: np.ndarray
    point_row: np.ndarray
    point_col: np.ndarray
    point_valid: np.ndarray

    def __post_init__(self):
        for name in ("pixel_to_point", "depth", "visible", "point_row", "point_col", "point_valid"):
            setattr(self, name, _freeze(getattr(self, name)))

    @property
    def image_size(self) -> tuple[int, int]:
        return self.pixel_to_point.shape

    def points_in_mask(self, bitmap: np.ndarray) -> np.ndarray:
        """Boolean per point: rounded projection lands on a set mask pixel."""
        h, w = bitmap.shape
        ok = (
            self.point_valid
            & (self.point_row >= 0)
            & (self.point_row < h)
            & (self.point_col >= 0)
            & (self.point_col < w)
        )
        out = np.zeros(self.point_valid.shape[0], dtype=bool)
        idx = np.flatnonzero(ok)
        out[idx] = bitmap[self.point_row[idx], self.point_col[idx]]
        return out


def project_points(
    cloud: PointCloud, view: CameraView, z_near: float = Z_NEAR
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Project all points into a view.

    Returns (u, v, z, valid): pixel coordinates, camera-space depth, and a
    flag that is False for points behind the camera (z <= z_near). u/v are
    undefined (set to 0) where invalid.
    """
    cam = cloud.positions @ view.rotation.T + view.translation
    z = cam[:, 2]
    valid = z > z_near
    u = np.zeros_like(z)
    v = np.zeros_like(z)
    u[valid] = view.fx * cam[valid, 0] / z[valid] + view.cx
    v[valid] = view.fy * cam[valid, 1] / z[valid] + view.cy
    return u, v, z, valid


def project_point(
    cloud: PointCloud, view: CameraView, index: int, z_near: float = Z_NEAR
) -> tuple[float, float, float] | None:
    """Project a single point; returns (u, v, z) or None when behind the camera."""
    if not 0 <= index < cloud.n:
        raise ValueError(f"point index {index} out of range for cloud of size {cloud.n}")
    u, v, z, valid = project_points(
        PointCloud(cloud.positions[index : index + 1]), view, z_near=z_near
    )
    if not valid[0]:
        return None
    return float(u[0]), float(v[0]), float(z[0])


def _splat_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel offsets of a rasterized disc: all (di, dj) with di^2+dj^2 <= r^2."""
    r = int(radius)
    rng = np.arange(-r, r + 1)
    di, dj = np.meshgrid(rng, rng, indexing="ij")
    keep = di * di + dj * dj <= r * r
    return di[keep].ravel(), dj[keep].ravel()


def render_visibility(
    cloud: PointCloud,
    view: CameraView,
    splat_radius: int = DEFAULT_SPLAT_RADIUS,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
    z_near: float = Z_NEAR,
) -> ViewRender:
    """Rasterize the cloud into a z-buffer and derive per-point visibility.

    Each point is splatted as a disc of ``splat_radius`` pixels around its
    rounded projection. Per pixel the nearest point wins (ties broken by
    lower point index). A point is visible iff at one or more in-bounds
    pixels of its own splat the winning depth is within ``depth_tolerance``
    of the point's depth.
    """
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    if depth_tolerance <= 0:
        raise ValueError("depth_tolerance must be > 0")
    h, w = view.height, view.width
    n = cloud.n

    u, v, z, valid = project_points(cloud, view, z_near=z_near)
    rows = np.full(n, np.iinfo(np.int64).min, dtype=np.int64)
    cols = np.full(n, np.iinfo(np.int64).min, dtype=np.int64)
    rows[valid] = np.rint(v[valid]).astype(np.int64)
    cols[valid] = np.rint(u[valid]).astype(np.int64)

    di, dj = _splat_offsets(splat_radius)
    pids = np.flatnonzero(valid)
    # Candidate (pixel, point) pairs: every splat pixel of every valid point.
    cand_r = rows[pids][:, None] + di[None, :]
    cand_c = cols[pids][:, None] + dj[None, :]
    cand_p = np.broadcast_to(pids[:, None], cand_r.shape)
    in_img = (cand_r >= 0) & (cand_r < h) & (cand_c >= 0) & (cand_c < w)
    cand_r = cand_r[in_img]
    cand_c = cand_c[in_img]
    cand_p = cand_p[in_img]
    cand_z = z[cand_p]
    flat = cand_r * w + cand_c

    depth = np.full(h * w, np.inf, dtype=np.float64)
    winner = np.full(h * w, -1, dtype=np.int64)
    if flat.size:
        # Sort by (pixel, depth, point index): the first candidate per pixel
        # is the z-buffer winner with deterministic tie-breaking.
        order = np.lexsort((cand_p, cand_z, flat))
        flat_sorted = flat[order]
        first = np.ones(flat_sorted.size, dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        win_idx = order[first]
        depth[flat[win_idx]] = cand_z[win_idx]
        winner[flat[win_idx]] = cand_p[win_idx]

    visible = np.zeros(n, dtype=bool)
    if flat.size:
        survives = cand_z - depth[flat] <= depth_tolerance
        visible[np.unique(cand_p[survives])] = True

    return ViewRender(
        view_id=view.view_id,
        pixel_to_point=winner.reshape(h, w),
        depth=depth.reshape(h, w),
        visible=visible,
        point_row=rows,
        point_col=cols,
        point_valid=valid,
    )


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation and translation for a camera at ``eye``
    looking at ``target`` (camera Y points down, Z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise ValueError("eye and target coincide")
    zc = forward / fn
    xc = np.cross(zc, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(xc)
    if xn < 1e-12:
        raise ValueError("view direction parallel to up vector")
    xc = xc / xn
    yc = np.cross(zc, xc)
    r = np.stack([xc, yc, zc], axis=0)
    return r, -r @ eye


def generate_camera_rig(
    count: int = 10,
    radius: float = 2.5,
    elevation_rings: int = 2,
    image_size: tuple[int, int] = (256, 256),
    fov_deg: float = 50.0,
    max_elevation_deg: float = 30.0,
) -> list[CameraView]:
    """Deterministic inward-looking camera rig on a sphere around the origin.

    Cameras are spread over ``elevation_rings`` rings (elevations evenly
    spaced in [-max_elevation_deg, +max_elevation_deg]; a single ring sits at
    the equator), each ring holding an equal share of evenly spaced azimuths.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if elevation_rings < 1:
        raise ValueError("elevation_rings must be >= 1")
    h, w = image_size
    focal = 0.5 * w / math.tan(math.radians(fov_deg) / 2.0)
    cx, cy = w / 2.0, h / 2.0

    rings = min(elevation_rings, count)
    if rings == 1:
        elevations = [0.0]
    else:
        elevations = list(np.linspace(-max_elevation_deg, max_elevation_deg, rings))
    per_ring = [count // rings + (1 if i < count % rings else 0) for i in range(rings)]

    views = []
    vid = 0
    for ring, n_az in enumerate(per_ring):
        el = math.radians(elevations[ring])
        for i in range(n_az):
            az = 2.0 * math.pi * i / n_az
            eye = radius * np.array(
                [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
            )
            rot, trans = look_at(eye, np.zeros(3), np.array([0.0, 1.0, 0.0]))
            views.append(
                CameraView(
                    view_id=vid,
                    rotation=rot,
                    translation=trans,
                    fx=focal,
                    fy=focal,
                    cx=cx,
                    cy=cy,
                    height=h,
                    width=w,
                )
            )
            vid += 1
    return views


def save_rig(path, views: list[CameraView]) -> None:
    """Write a camera rig as a JSON array (rotation row-major)."""
    doc = [
        {
            "view_id": v.view_id,
            "rotation": [float(x) for x in v.rotation.ravel()],
            "translation": [float(x) for x in v.translation],
            "fx": v.fx,
            "fy": v.fy,
            "cx": v.cx,
            "cy": v.cy,
            "height": v.height,
            "width": v.width,
        }
        for v in views
    ]
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_rig(path) -> list[CameraView]:
    with open(path) as f:
        doc = json.load(f)
    views = []
    for entry in doc:
        views.append(
            CameraView(
                view_id=int(entry["view_id"]),
                rotation=np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
                translation=np.asarray(entry["translation"], dtype=np.float64),
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                height=int(entry["height"]),
                width=int(entry["width"]),
            )
        )
    return views
