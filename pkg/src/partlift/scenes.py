"""Seeded generator of labeled multi-part point-cloud scenes.

Parts are analytic primitives (box, cylinder, sphere) surface-sampled
proportionally to area, so every downstream quantity (normals, GT labels,
masks) has a closed-form reference. The assembled object is normalized to
fit the unit cube centered at the origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PipelineError
from .geometry import CameraView, PointCloud, generate_camera_rig

PRIMITIVES = ("box", "cylinder", "sphere")

# distinct flat colors per category
_PALETTE = np.array(
    [
        [0.85, 0.25, 0.25],
        [0.25, 0.55, 0.85],
        [0.30, 0.75, 0.35],
        [0.90, 0.75, 0.20],
        [0.65, 0.35, 0.80],
        [0.20, 0.75, 0.75],
    ]
)


@dataclass
class PartSpec:
    """One primitive part.

    scale: box half-extents (sx, sy, sz); sphere radius = sx; cylinder
    radius = sx, half-height = sz. rotation is XYZ Euler angles in degrees.
    """

    primitive: str
    category: int
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: tuple[float, float, float] = (0.1, 0.1, 0.1)
    color: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ValueError(f"unknown primitive {self.primitive!r}")
        if min(self.scale) <= 0:
            raise ValueError("part scales must be positive")


@dataclass
class SceneSpec:
    seed: int
    parts: list[PartSpec]
    points_per_unit_area: float = 4000.0
    jitter: float = 0.0

    def __post_init__(self):
        if not self.parts:
            raise ValueError("a scene needs at least one part")
        if self.points_per_unit_area <= 0:
            raise ValueError("points_per_unit_area must be positive")


def part_surface_area(part: PartSpec) -> float:
    sx, sy, sz = part.scale
    if part.primitive == "box":
        return 8.0 * (sx * sy + sy * sz + sx * sz)
    if part.primitive == "sphere":
        return 4.0 * math.pi * sx * sx
    # cylinder: lateral 2*pi*r*(2h) plus two caps
    return 4.0 * math.pi * sx * sz + 2.0 * math.pi * sx * sx


def _rotation_matrix(rotation_deg) -> np.ndarray:
    rx, ry, rz = (math.radians(a) for a in rotation_deg)
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def part_bbox(part: PartSpec) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned world bounds of a part (conservative for cylinders)."""
    sx, sy, sz = part.scale
    if part.primitive == "sphere":
        half = np.array([sx, sx, sx])
        center = np.asarray(part.translation)
        return center - half, center + half
    if part.primitive == "cylinder":
        local = np.array([sx, sx, sz])
    else:
        local = np.asarray(part.scale, dtype=np.float64)
    corners = np.array(
        [[dx, dy, dz] for dx in (-1, 1) for dy in (-1, 1) for dz in (-1, 1)]
    ) * local
    world = corners @ _rotation_matrix(part.rotation_deg).T + np.asarray(part.translation)
    return world.min(axis=0), world.max(axis=0)


def _sample_box(rng: np.random.Generator, n: int, half: np.ndarray):
    ax, ay, az = 2 * half
    face_areas = np.array([ay * az, ay * az, ax * az, ax * az, ax * ay, ax * ay])
    faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    for f in range(6):
        sel = faces == f
        axis, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[sel, axis] = sign * half[axis]
        pts[sel, others[0]] = uv[sel, 0] * half[others[0]]
        pts[sel, others[1]] = uv[sel, 1] * half[others[1]]
        nrm[sel, axis] = sign
    return pts, nrm


def _sample_sphere(rng: np.random.Generator, n: int, radius: float):
    d = rng.normal(size=(n, 3))
    norms = np.linalg.norm(d, axis=1)
    norms[norms < 1e-12] = 1.0
    d = d / norms[:, None]
    return radius * d, d


def _sample_cylinder(rng: np.random.Generator, n: int, radius: float, half_h: float):
    lateral_area = 4.0 * math.pi * radius * half_h
    cap_area = 2.0 * math.pi * radius * radius
    on_side = rng.random(n) < lateral_area / (lateral_area + cap_area)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    nrm = np.empty((n, 3))
    side = np.flatnonzero(on_side)
    pts[side, 0] = radius * np.cos(phi[side])
    pts[side, 1] = radius * np.sin(phi[side])
    pts[side, 2] = rng.uniform(-half_h, half_h, size=side.size)
    nrm[side, 0] = np.cos(phi[side])
    nrm[side, 1] = np.sin(phi[side])
    nrm[side, 2] = 0.0
    cap = np.flatnonzero(~on_side)
    rho = radius * np.sqrt(rng.random(cap.size))
    sign = np.where(rng.random(cap.size) < 0.5, 1.0, -1.0)
    pts[cap, 0] = rho * np.cos(phi[cap])
    pts[cap, 1] = rho * np.sin(phi[cap])
    pts[cap, 2] = sign * half_h
    nrm[cap, 0] = 0.0
    nrm[cap, 1] = 0.0
    nrm[cap, 2] = sign
    return pts, nrm


def scene_bounds(parts: list[PartSpec]) -> tuple[np.ndarray, np.ndarray]:
    los, his = zip(*(part_bbox(p) for p in parts))
    return np.min(los, axis=0), np.max(his, axis=0)


def normalization_scale(parts: list[PartSpec]) -> float:
    """Uniform scale that maps the assembled parts into the unit cube."""
    lo, hi = scene_bounds(parts)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise PipelineError("scene parts have zero spatial extent")
    return 1.0 / extent


def density_for_target(parts: list[PartSpec], target_points: int) -> float:
    """Sampling density that yields roughly target_points after normalization."""
    s = normalization_scale(parts)
    total = sum(part_surface_area(p) for p in parts) * s * s
    return target_points / total


def generate(spec: SceneSpec) -> tuple[PointCloud, np.ndarray, np.ndarray]:
    """Sample the scene; returns (cloud, gt_category, gt_instance).

    Point counts are proportional to post-normalization surface area;
    instance id = part index. Deterministic in spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    s_est = normalization_scale(spec.parts)

    all_pts, all_nrm, all_col, all_cat, all_inst = [], [], [], [], []
    for idx, part in enumerate(spec.parts):
        area = part_surface_area(part) * s_est * s_est
        count = max(1, int(round(spec.points_per_unit_area * area)))
        if part.primitive == "box":
            pts, nrm = _sample_box(rng, count, np.asarray(part.scale))
        elif part.primitive == "sphere":
            pts, nrm = _sample_sphere(rng, count, part.scale[0])
        else:
            pts, nrm = _sample_cylinder(rng, count, part.scale[0], part.scale[2])
        rot = _rotation_matrix(part.rotation_deg)
        pts = pts @ rot.T + np.asarray(part.translation)
        nrm = nrm @ rot.T
        color = part.color if part.color is not None else tuple(_PALETTE[part.category % len(_PALETTE)])
        all_pts.append(pts)
        all_nrm.append(nrm)
        all_col.append(np.tile(np.asarray(color), (count, 1)))
        all_cat.append(np.full(count, part.category, dtype=np.int64))
        all_inst.append(np.full(count, idx, dtype=np.int64))

    positions = np.concatenate(all_pts)
    normals = np.concatenate(all_nrm)
    colors = np.concatenate(all_col)
    if spec.jitter > 0:
        positions = positions + rng.normal(0.0, spec.jitter / s_est, size=positions.shape)

    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise PipelineError("degenerate scene: all points coincide")
    positions = (positions - (lo + hi) / 2.0) / extent

    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / lengths
    cloud = PointCloud(positions=positions, colors=colors, normals=normals)
    return cloud, np.concatenate(all_cat), np.concatenate(all_inst)


# --- benchmark composition ---------------------------------------------------


def _easy_scene(rng: np.random.Generator, target_points: int, jitter: float) -> SceneSpec:
    """3-5 well-separated parts on a ring, 2-3 categories."""
    n_parts = int(rng.integers(3, 6))
    n_cats = int(rng.integers(2, 4))
    phase = rng.uniform(0.0, 2.0 * math.pi)
    parts = []
    for i in range(n_parts):
        az = phase + 2.0 * math.pi * i / n_parts
        center = (0.75 * math.cos(az), float(rng.uniform(-0.12, 0.12)), 0.75 * math.sin(az))
        primitive = PRIMITIVES[int(rng.integers(3))]
        if primitive == "box":
            scale = tuple(rng.uniform(0.10, 0.18, size=3))
        elif primitive == "sphere":
            r = float(rng.uniform(0.12, 0.18))
            scale = (r, r, r)
        else:
            scale = (float(rng.uniform(0.08, 0.14)), 0.0, float(rng.uniform(0.12, 0.20)))
            scale = (scale[0], scale[0], scale[2])
        parts.append(
            PartSpec(
                primitive=primitive,
                category=i % n_cats,
                translation=center,
                rotation_deg=(0.0, float(rng.uniform(0.0, 360.0)), 0.0),
                scale=scale,
            )
        )
    density = density_for_target(parts, target_points)
    return SceneSpec(
        seed=int(rng.integers(2**31)),
        parts=parts,
        points_per_unit_area=density,
        jitter=jitter,
    )


def _hard_scene(rng: np.random.Generator, target_points: int, jitter: float) -> SceneSpec:
    """6-10 parts on a height-staggered ring: a pair of near-touching thin
    handles, two thin plates, two knobs, and block fillers. Every category
    has at least two instances except the optional blocks."""
    n_total = int(rng.integers(6, 8))
    n_slots = n_total - 1  # the twin handles share one slot
    phase = rng.uniform(0.0, 2.0 * math.pi)
    slot_az = [phase + 2.0 * math.pi * i / n_slots for i in range(n_slots)]
    # alternate slots up/down so parts rarely overlap in projection
    slot_y = [
        (1.0 if i % 2 == 0 else -1.0) * float(rng.uniform(0.12, 0.18))
        for i in range(n_slots)
    ]

    parts = []
    # twin handles: two parallel thin cylinders, lying along the ring tangent
    r = float(rng.uniform(0.025, 0.035))
    h = float(rng.uniform(0.10, 0.14))
    gap = float(rng.uniform(0.004, 0.012))
    az = slot_az[0]
    center = np.array([0.85 * math.cos(az), slot_y[0], 0.85 * math.sin(az)])
    tangent = np.array([-math.sin(az), 0.0, math.cos(az)])
    for sign in (-1.0, 1.0):
        pos = center + sign * (r + gap / 2.0) * tangent
        parts.append(
            PartSpec(
                primitive="cylinder",
                category=1,
                translation=tuple(pos),
                rotation_deg=(90.0, 0.0, 0.0),
                scale=(r, r, h),
            )
        )

    def _slot(i):
        return (0.85 * math.cos(slot_az[i]), slot_y[i], 0.85 * math.sin(slot_az[i]))

    # two thin plates
    for i in (1, 2):
        parts.append(
            PartSpec(
                primitive="box",
                category=2,
                translation=_slot(i),
                rotation_deg=(0.0, float(rng.uniform(0.0, 360.0)), 0.0),
                scale=(
                    float(rng.uniform(0.07, 0.10)),
                    float(rng.uniform(0.006, 0.012)),
                    float(rng.uniform(0.07, 0.10)),
                ),
            )
        )
    # two knobs
    for i in (3, 4):
        rr = float(rng.uniform(0.055, 0.08))
        parts.append(
            PartSpec(primitive="sphere", category=3, translation=_slot(i), scale=(rr, rr, rr))
        )
    # block fillers
    i_slot = 5
    while len(parts) < n_total:
        parts.append(
            PartSpec(
                primitive="box",
                category=0,
                translation=_slot(i_slot),
                rotation_deg=(0.0, float(rng.uniform(0.0, 360.0)), 0.0),
                scale=tuple(rng.uniform(0.07, 0.10, size=3)),
            )
        )
        i_slot += 1
    density = density_for_target(parts, target_points)
    return SceneSpec(
        seed=int(rng.integers(2**31)),
        parts=parts,
        points_per_unit_area=density,
        jitter=jitter,
    )


def make_benchmark(
    count: int,
    seed: int = 0,
    difficulty: str = "easy",
    target_points: int = 20000,
    jitter: float = 0.002,
    views: int = 10,
) -> list[tuple[SceneSpec, list[CameraView]]]:
    """Deterministic batch of scene specs plus their camera rigs."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if difficulty not in ("easy", "hard"):
        raise ValueError("difficulty must be 'easy' or 'hard'")
    rng = np.random.default_rng(seed)
    build = _easy_scene if difficulty == "easy" else _hard_scene
    out = []
    rig = generate_camera_rig(count=views)
    for _ in range(count):
        out.append((build(rng, target_points, jitter), rig))
    return out


# --- SceneSpec JSON ----------------------------------------------------------


def save_scene_spec(path, spec: SceneSpec) -> None:
    doc = {
        "seed": spec.seed,
        "points_per_unit_area": spec.points_per_unit_area,
        "jitter": spec.jitter,
        "parts": [
            {
                "primitive": p.primitive,
                "category": p.category,
                "translation": list(p.translation),
                "rotation_deg": list(p.rotation_deg),
                "scale": list(p.scale),
                "color": list(p.color) if p.color is not None else None,
            }
            for p in spec.parts
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_scene_spec(path) -> SceneSpec:
    with open(path) as f:
        doc = json.load(f)
    parts = [
        PartSpec(
            primitive=p["primitive"],
            category=int(p["category"]),
            translation=tuple(p["translation"]),
            rotation_deg=tuple(p.get("rotation_deg", (0, 0, 0))),
            scale=tuple(p["scale"]),
            color=tuple(p["color"]) if p.get("color") is not None else None,
        )
        for p in doc["parts"]
    ]
    return SceneSpec(
        seed=int(doc["seed"]),
        parts=parts,
        points_per_unit_area=float(doc["points_per_unit_area"]),
        jitter=float(doc.get("jitter", 0.0)),
    )
