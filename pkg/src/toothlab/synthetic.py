"""Deterministic synthetic panoramic scenes for desk-scale runs.

Generates a stylized dental arrangement: two arches of 14 teeth each laid
out per quadrant from the midline outward (incisor, incisor, canine, three
molar-1 slots, molar-2), with class-dependent tooth silhouettes.  Everything
derives from ``numpy.random.SeedSequence`` over explicit integer keys, so
identical seeds reproduce identical scenes on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .masks import Polygon

__all__ = [
    "ARCH_CLASSES",
    "ToothSite",
    "arch_sites",
    "tooth_polygon",
    "ground_truth_teeth",
    "generate_dataset_document",
]

# per-quadrant class order from the midline outward (7 teeth per quadrant)
ARCH_CLASSES = ("incisor", "incisor", "canine", "molar1", "molar1", "molar1", "molar2")

# tooth silhouette half-extents in units of image height / 500
_CLASS_SIZES = {
    "incisor": (9.0, 24.0),
    "canine": (10.0, 26.0),
    "molar1": (15.0, 21.0),
    "molar2": (16.0, 19.0),
    "molar3": (15.0, 16.0),
}

_TRUTH_STREAM = 101
_PREDICT_STREAM = 202


@dataclass(frozen=True)
class ToothSite:
    """One slot of the arrangement: where a tooth sits and what it is."""

    quadrant: str  # upper_left | upper_right | lower_left | lower_right
    ordinal: int  # 0 = closest to the midline
    cx: float
    cy: float
    tooth_class: str
    tilt_deg: float


def arch_sites(width: int, height: int) -> list[ToothSite]:
    """The 28 canonical tooth sites of a panoramic frame."""
    sites = []
    unit = height / 500.0
    spacing = width / 18.0
    for vertical, cy in (("upper", height * 0.36), ("lower", height * 0.64)):
        for horizontal in ("left", "right"):
            direction = -1.0 if horizontal == "left" else 1.0
            for ordinal, tooth_class in enumerate(ARCH_CLASSES):
                cx = width / 2 + direction * spacing * (0.6 + ordinal)
                # crowns fan gently away from the midline, mirrored by jaw
                tilt = direction * (2.0 + 2.2 * ordinal)
                if vertical == "lower":
                    tilt = -tilt
                arch_cy = cy + unit * 6.0 * math.sin(math.pi * ordinal / 8.0) * (
                    -1.0 if vertical == "upper" else 1.0
                )
                sites.append(
                    ToothSite(
                        quadrant=f"{vertical}_{horizontal}",
                        ordinal=ordinal,
                        cx=cx,
                        cy=arch_cy,
                        tooth_class=tooth_class,
                        tilt_deg=tilt,
                    )
                )
    return sites


def tooth_polygon(
    tooth_class: str,
    cx: float,
    cy: float,
    unit: float,
    tilt_deg: float,
    rng: np.random.Generator,
    wobble: float = 0.09,
    n_vertices: int = 20,
) -> Polygon:
    """Rounded tooth silhouette: an ellipse with a narrowed root end.

    Aspect and outline vary tooth to tooth so that a class has a real spread
    of shape values, not copies of one template.
    """
    rx, ry = _CLASS_SIZES[tooth_class]
    rx *= unit * rng.uniform(0.82, 1.18)
    ry *= unit * rng.uniform(0.82, 1.18)
    angles = np.linspace(0.0, 2.0 * math.pi, n_vertices, endpoint=False)
    pts = []
    for a in angles:
        px = rx * math.cos(a)
        py = ry * math.sin(a)
        # taper the root half (negative y = toward the jaw interior)
        if py < 0:
            px *= 0.55
        noise = 1.0 + rng.uniform(-wobble, wobble)
        pts.append((px * noise, py * noise))
    t = math.radians(tilt_deg)
    c, s = math.cos(t), math.sin(t)
    placed = [
        (max(0.0, cx + c * x - s * y), max(0.0, cy + s * x + c * y)) for x, y in pts
    ]
    return Polygon(placed)


def _rng_for(seed: int, image_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(image_id), stream)))


def ground_truth_teeth(
    seed: int, image_id: int, width: int, height: int
) -> list[tuple[Polygon, str]]:
    """The ground-truth teeth of one synthetic radiograph."""
    rng = _rng_for(seed, image_id, _TRUTH_STREAM)
    unit = height / 500.0
    teeth = []
    for site in arch_sites(width, height):
        cx = site.cx + rng.normal(0, 2.0 * unit)
        cy = site.cy + rng.normal(0, 2.5 * unit)
        tilt = site.tilt_deg + rng.normal(0, 2.0)
        teeth.append(
            (tooth_polygon(site.tooth_class, cx, cy, unit, tilt, rng), site.tooth_class)
        )
    return teeth


def prediction_rng(seed: int, image_id: int) -> np.random.Generator:
    return _rng_for(seed, image_id, _PREDICT_STREAM)


def generate_dataset_document(
    seed: int, n_images: int, width: int = 1000, height: int = 500
) -> dict:
    """COCO-style ground-truth document for ``n_images`` synthetic frames."""
    class_ids = {"incisor": 1, "canine": 2, "molar1": 3, "molar2": 4, "molar3": 5}
    images = []
    annotations = []
    ann_id = 1
    for image_id in range(1, n_images + 1):
        images.append(
            {
                "id": image_id,
                "file_name": f"synthetic_{seed}_{image_id:03d}.png",
                "width": width,
                "height": height,
            }
        )
        for polygon, tooth_class in ground_truth_teeth(seed, image_id, width, height):
            flat = []
            for x, y in polygon.vertices:
                flat.extend((round(x, 3), round(y, 3)))
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": class_ids[tooth_class],
                    "segmentation": [flat],
                }
            )
            ann_id += 1
    return {
        "images": images,
        "categories": [{"id": v, "name": k} for k, v in class_ids.items()],
        "annotations": annotations,
    }
