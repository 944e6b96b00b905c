"""Shape generators and independent oracles shared across the test suite."""

from __future__ import annotations

import math

import numpy as np

from toothlab.masks import BinaryMask, Polygon


def rect_polygon(x0, y0, x1, y1) -> Polygon:
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def disk_polygon(cx, cy, radius, n_vertices=256) -> Polygon:
    angles = np.linspace(0, 2 * math.pi, n_vertices, endpoint=False)
    return Polygon(
        [(cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in angles]
    )


def blob_polygon(rng: np.random.Generator, center, base_radius, n_vertices=48) -> Polygon:
    """Smooth random blob with low-order harmonics; chiral and asymmetric."""
    angles = np.linspace(0, 2 * math.pi, n_vertices, endpoint=False)
    r = np.ones(n_vertices)
    for k in (1, 2, 3):
        a, b = rng.uniform(-0.4 / k, 0.4 / k, 2)
        r = r + a * np.cos(k * angles) + b * np.sin(k * angles)
    radii = base_radius * np.clip(r, 0.35, None)
    cx, cy = center
    return Polygon(
        [(cx + rr * math.cos(t), cy + rr * math.sin(t)) for rr, t in zip(radii, angles)]
    )


def random_polygon(rng: np.random.Generator, width, height) -> Polygon:
    """Star polygon placed anywhere in the frame (may poke out of bounds)."""
    n = int(rng.integers(3, 12))
    cx = rng.uniform(0, width)
    cy = rng.uniform(0, height)
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    # keep vertices apart so consecutive duplicates cannot occur
    radii = rng.uniform(1.0, max(width, height) / 3, n)
    pts = [
        (max(0.0, cx + r * math.cos(a)), max(0.0, cy + r * math.sin(a)))
        for r, a in zip(radii, angles)
    ]
    try:
        return Polygon(pts)
    except ValueError:
        return random_polygon(rng, width, height)


def random_mask(rng: np.random.Generator, width, height, density=0.5) -> BinaryMask:
    return BinaryMask.from_array(rng.random((height, width)) < density)


# --- independent oracles -------------------------------------------------


def point_in_polygon(px: float, py: float, vertices) -> bool:
    """Classic scalar even-odd crossing test (oracle for rasterize)."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        if (y0 > py) != (y1 > py):
            x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < x_cross:
                inside = not inside
    return inside


def rasterize_bruteforce(polygon: Polygon, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            out[y, x] = point_in_polygon(x + 0.5, y + 0.5, polygon.vertices)
    return out


def dense_raw_moments(arr: np.ndarray) -> dict:
    """Raw moments by dense double summation over pixel centers."""
    ys, xs = np.nonzero(np.asarray(arr, dtype=bool))
    xc = xs + 0.5
    yc = ys + 0.5
    return {
        (p, q): float(np.sum(xc**p * yc**q))
        for p in range(4)
        for q in range(4)
        if p + q <= 3
    }


def dense_central_moments(arr: np.ndarray, cx: float, cy: float) -> dict:
    ys, xs = np.nonzero(np.asarray(arr, dtype=bool))
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    return {
        (p, q): float(np.sum(dx**p * dy**q))
        for p in range(4)
        for q in range(4)
        if p + q <= 3
    }
