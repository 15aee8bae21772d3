"""Per-view 2D instance masks: representation, GT rasterization, corruption, I/O.

A mask set is an ordered list of binary per-view masks, each tagged with a
semantic category. Masks within one view may overlap. On disk each view is
a pair of (PNG bitmaps, JSON sidecar); see save_masks / load_masks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import PipelineError
from .geometry import ViewRender

DEFAULT_MIN_PIXELS = 5


@dataclass
class InstanceMask2D:
    """One binary instance mask in one view."""

    view_id: int
    category: int
    bitmap: np.ndarray  # (H, W) bool

    def __post_init__(self):
        bmp = np.asarray(self.bitmap, dtype=bool)
        if bmp.ndim != 2:
            raise ValueError("bitmap must be 2-D")
        if not bmp.any():
            raise ValueError("mask bitmap has no set pixels")
        self.bitmap = bmp

    @property
    def pixel_count(self) -> int:
        return int(self.bitmap.sum())


@dataclass
class MaskSet:
    """Ordered collection of 2D instance masks across all views."""

    masks: list[InstanceMask2D] = field(default_factory=list)
    category_names: dict[int, str] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.masks)

    @property
    def by_view(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, mask in enumerate(self.masks):
            out.setdefault(mask.view_id, []).append(i)
        return out

    @property
    def view_ids(self) -> list[int]:
        return sorted(self.by_view.keys())

    @property
    def categories(self) -> list[int]:
        return sorted({m.category for m in self.masks})

    def in_view(self, view_id: int) -> list[InstanceMask2D]:
        return [self.masks[i] for i in self.by_view.get(view_id, [])]

    def category_name(self, category: int) -> str:
        return self.category_names.get(category, f"category_{category}")


def rasterize_ground_truth(
    gt_category: np.ndarray,
    gt_instance: np.ndarray,
    render: ViewRender,
    min_pixels: int = DEFAULT_MIN_PIXELS,
) -> list[InstanceMask2D]:
    """Exact per-instance masks for one view from per-point labels.

    A pixel belongs to an instance iff the pixel's z-buffer winner is one
    of that instance's points. Instances with fewer than ``min_pixels``
    visible pixels are dropped for this view. Output is ordered by
    instance id.
    """
    gt_instance = np.asarray(gt_instance, dtype=np.int64)
    gt_category = np.asarray(gt_category, dtype=np.int64)
    p2p = render.pixel_to_point
    occupied = p2p >= 0
    pixel_inst = np.full(p2p.shape, -1, dtype=np.int64)
    pixel_inst[occupied] = gt_instance[p2p[occupied]]

    masks = []
    for inst in np.unique(pixel_inst[pixel_inst >= 0]):
        bitmap = pixel_inst == inst
        if bitmap.sum() < min_pixels:
            continue
        owners = gt_category[gt_instance == inst]
        masks.append(
            InstanceMask2D(view_id=render.view_id, category=int(owners[0]), bitmap=bitmap)
        )
    return masks


# --- corruption models -----------------------------------------------------

_CORRUPT_RE = re.compile(r"^([a-z-]+)(?:\(([^)]*)\))?$")


def parse_corruption(spec: str) -> tuple[str, tuple[float, ...]]:
    """Parse a corruption spec like 'bboxify', 'dilate(2)' or
    'boundary-noise(2,0.3)' into (name, args)."""
    m = _CORRUPT_RE.match(spec.strip())
    if not m:
        raise ValueError(f"bad corruption spec: {spec!r}")
    name = m.group(1)
    args = tuple(float(x) for x in m.group(2).split(",")) if m.group(2) else ()
    expected = {"bboxify": 0, "dilate": 1, "erode": 1, "dropout": 1, "boundary-noise": 2}
    if name not in expected:
        raise ValueError(f"unknown corruption model: {name!r}")
    if len(args) != expected[name]:
        raise ValueError(f"corruption {name!r} takes {expected[name]} argument(s), got {len(args)}")
    return name, args


def _disc(radius: int) -> np.ndarray:
    r = int(radius)
    rng = np.arange(-r, r + 1)
    di, dj = np.meshgrid(rng, rng, indexing="ij")
    return di * di + dj * dj <= r * r


def _bboxify(bitmap: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    out = np.zeros_like(bitmap)
    out[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] = True
    return out


def corrupt(masks: MaskSet, model: str, seed: int = 0) -> MaskSet:
    """Apply a detector-imperfection model to every mask, deterministically.

    Models: bboxify (replace by filled bounding box), dilate(r), erode(r),
    dropout(p) (remove whole masks), boundary-noise(r, p) (flip pixels in
    the band within r of the mask boundary with probability p). Masks that
    end up empty are dropped.
    """
    name, args = parse_corruption(model)
    rng = np.random.default_rng(seed)
    out = []
    for mask in masks.masks:
        bmp = mask.bitmap
        if name == "bboxify":
            new = _bboxify(bmp)
        elif name == "dilate":
            r = int(args[0])
            new = ndimage.binary_dilation(bmp, structure=_disc(r)) if r > 0 else bmp.copy()
        elif name == "erode":
            r = int(args[0])
            new = ndimage.binary_erosion(bmp, structure=_disc(r)) if r > 0 else bmp.copy()
        elif name == "dropout":
            if rng.random() < args[0]:
                continue
            new = bmp.copy()
        else:  # boundary-noise
            r, prob = int(args[0]), args[1]
            if r > 0:
                disc = _disc(r)
                band = ndimage.binary_dilation(bmp, structure=disc) & ~ndimage.binary_erosion(
                    bmp, structure=disc
                )
            else:
                band = np.zeros_like(bmp)
            flips = band & (rng.random(bmp.shape) < prob)
            new = bmp ^ flips
        if not new.any():
            continue
        out.append(InstanceMask2D(view_id=mask.view_id, category=mask.category, bitmap=new))
    return MaskSet(masks=out, category_names=dict(masks.category_names))


# --- disk layout ------------------------------------------------------------

SIDECAR_NAME = "masks.json"


def save_masks(directory, masks: MaskSet) -> None:
    """Write one 8-bit binary PNG per mask (view{k}_mask{i}.png) plus the
    JSON sidecar listing (view_id, mask_index, category) per mask in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sidecar = []
    index_in_view: dict[int, int] = {}
    for mask in masks.masks:
        idx = index_in_view.get(mask.view_id, 0)
        index_in_view[mask.view_id] = idx + 1
        img = Image.fromarray(mask.bitmap.astype(np.uint8) * 255, mode="L")
        img.save(directory / f"view{mask.view_id}_mask{idx}.png")
        sidecar.append(
            {
                "view_id": mask.view_id,
                "mask_index": idx,
                "category_id": mask.category,
                "category_name": masks.category_name(mask.category),
            }
        )
    with open(directory / SIDECAR_NAME, "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def load_masks(directory) -> MaskSet:
    """Read a mask directory in either layout.

    Per-mask layout: view{k}_mask{i}.png, one binary image per mask.
    Combined layout: view{k}.png, 16-bit grayscale where pixel value v >= 1
    means membership in mask v-1 of that view's sidecar list.
    """
    directory = Path(directory)
    sidecar_path = directory / SIDECAR_NAME
    if not sidecar_path.exists():
        raise PipelineError(f"mask sidecar not found: {sidecar_path}")
    with open(sidecar_path) as f:
        sidecar = json.load(f)

    combined_cache: dict[int, np.ndarray] = {}
    masks = []
    names: dict[int, str] = {}
    for entry in sidecar:
        vid = int(entry["view_id"])
        idx = int(entry["mask_index"])
        cat = int(entry["category_id"])
        if "category_name" in entry:
            names.setdefault(cat, entry["category_name"])
        per_mask = directory / f"view{vid}_mask{idx}.png"
        if per_mask.exists():
            bitmap = np.asarray(Image.open(per_mask)) > 0
        else:
            if vid not in combined_cache:
                combined = directory / f"view{vid}.png"
                if not combined.exists():
                    raise PipelineError(
                        f"no bitmap for view {vid} mask {idx}: neither {per_mask} nor {combined}"
                    )
                combined_cache[vid] = np.asarray(Image.open(combined)).astype(np.int64)
            bitmap = combined_cache[vid] == idx + 1
        if not bitmap.any():
            raise PipelineError(f"mask {idx} of view {vid} is empty on disk")
        masks.append(InstanceMask2D(view_id=vid, category=cat, bitmap=bitmap))
    return MaskSet(masks=masks, category_names=names)
