"""Mask geometry kernel: polygons, run-length masks, image moments, overlap.

Everything here is a pure function over immutable values, so parallel use
needs no locking.  Pixel (x, y) covers the unit square [x, x+1) x [y, y+1)
and is sampled at its center (x + 0.5, y + 0.5); all moment sums use those
center coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Polygon",
    "BinaryMask",
    "MomentSet",
    "Orientation",
    "EmptyMaskError",
    "rasterize",
    "compute_moments",
    "centroid",
    "orientation_from_vertical",
    "iou",
]

# |mu20 - mu02| + |mu11| below this multiple of mu00^2 counts as rotationally
# degenerate (disk-like), where the principal axis is meaningless.
DEGENERACY_TOLERANCE = 1e-9


class EmptyMaskError(ValueError):
    """Raised when an operation needs at least one on pixel."""


@dataclass(frozen=True)
class Polygon:
    """Closed polygon in image coordinates (vertex list, implicit closure).

    Invariants: at least 3 vertices, all coordinates finite and >= 0, and no
    two cyclically consecutive vertices coincide.
    """

    vertices: tuple[tuple[float, float], ...]

    def __init__(self, vertices: Iterable[Sequence[float]]):
        pts = tuple((float(x), float(y)) for x, y in vertices)
        if len(pts) < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {len(pts)}")
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("polygon coordinates must be finite")
            if x < 0 or y < 0:
                raise ValueError(f"polygon coordinates must be >= 0, got ({x}, {y})")
        for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
            if x0 == x1 and y0 == y1:
                raise ValueError("consecutive duplicate vertices are not allowed")
        object.__setattr__(self, "vertices", pts)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of the vertex set."""
        xs = [x for x, _ in self.vertices]
        ys = [y for _, y in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon((x + dx, y + dy) for x, y in self.vertices)

    def rotated(self, angle_deg: float, center: tuple[float, float]) -> "Polygon":
        """Rotate about ``center``; positive angles tilt the top toward +x."""
        a = math.radians(angle_deg)
        c, s = math.cos(a), math.sin(a)
        cx, cy = center
        return Polygon(
            (cx + c * (x - cx) - s * (y - cy), cy + s * (x - cx) + c * (y - cy))
            for x, y in self.vertices
        )

    def scaled(self, factor: float, center: tuple[float, float] = (0.0, 0.0)) -> "Polygon":
        cx, cy = center
        return Polygon(
            (cx + factor * (x - cx), cy + factor * (y - cy)) for x, y in self.vertices
        )

    def with_vertex(self, index: int, x: float, y: float) -> "Polygon":
        """Copy with vertex ``index`` moved to (x, y)."""
        pts = list(self.vertices)
        pts[index] = (float(x), float(y))
        return Polygon(pts)


@dataclass(frozen=True)
class BinaryMask:
    """Run-length encoded binary mask.

    ``runs`` alternate off/on in row-major order and always begin with an off
    run (possibly zero-length).  Interior runs are strictly positive and the
    run lengths sum to ``width * height``.

    Wire/byte layout (``to_bytes``): the run lengths in order, each written as
    an unsigned LEB128 varint (7 payload bits per byte, high bit = continue).
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("mask dimensions must be >= 1")
        runs = tuple(int(r) for r in self.runs)
        if not runs:
            raise ValueError("runs may not be empty")
        if runs[0] < 0 or any(r <= 0 for r in runs[1:]):
            raise ValueError("only the leading off run may be zero-length")
        if sum(runs) != self.width * self.height:
            raise ValueError("run lengths must sum to width * height")
        object.__setattr__(self, "runs", runs)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        arr = np.asarray(array, dtype=bool)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        height, width = arr.shape
        flat = arr.ravel()
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        lengths = np.diff(np.concatenate(([0], boundaries, [flat.size])))
        runs = lengths.tolist()
        if flat[0]:
            runs.insert(0, 0)
        return cls(width=width, height=height, runs=tuple(runs))

    def to_array(self) -> np.ndarray:
        values = np.arange(len(self.runs)) % 2 == 1
        flat = np.repeat(values, np.asarray(self.runs, dtype=np.int64))
        return flat.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        """Number of on pixels."""
        return sum(self.runs[1::2])

    @property
    def empty(self) -> bool:
        return self.area == 0

    def to_bytes(self) -> bytes:
        out = bytearray()
        for run in self.runs:
            value = run
            while True:
                byte = value & 0x7F
                value >>= 7
                if value:
                    out.append(byte | 0x80)
                else:
                    out.append(byte)
                    break
        return bytes(out)

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "BinaryMask":
        runs = []
        value = 0
        shift = 0
        for byte in data:
            value |= (byte & 0x7F) << shift
            if byte & 0x80:
                shift += 7
            else:
                runs.append(value)
                value = 0
                shift = 0
        if shift:
            raise ValueError("truncated varint in mask data")
        return cls(width=width, height=height, runs=tuple(runs))

    def translated(self, dx: int, dy: int) -> "BinaryMask":
        """Shift by whole pixels; shifted-out content must stay in bounds."""
        arr = self.to_array()
        ys, xs = np.nonzero(arr)
        if len(ys) == 0:
            return self
        nx, ny = xs + dx, ys + dy
        if nx.min() < 0 or ny.min() < 0 or nx.max() >= self.width or ny.max() >= self.height:
            raise ValueError("translation moves mask out of bounds")
        out = np.zeros_like(arr)
        out[ny, nx] = True
        return BinaryMask.from_array(out)


@dataclass(frozen=True)
class MomentSet:
    """Raw, central, normalized and Hu moments of a mask.

    ``raw`` and ``central`` map (p, q) with p + q <= 3 to the moment value;
    ``normalized`` covers 2 <= p + q <= 3.  For an empty mask the raw moments
    are all zero and the centered parts are ``None`` (undefined).
    """

    raw: dict[tuple[int, int], float]
    central: dict[tuple[int, int], float] | None
    normalized: dict[tuple[int, int], float] | None
    hu: tuple[float, float, float, float, float, float, float] | None

    @property
    def defined(self) -> bool:
        return self.central is not None


class Orientation(NamedTuple):
    """Principal-axis tilt from vertical, degrees in (-90, 90].

    ``degenerate`` is set for disk-like masks where the axis is meaningless
    (angle reported as 0).  Positive angles mean the top of the midline leans
    toward +x.
    """

    angle_deg: float
    degenerate: bool


_MOMENT_ORDERS = [(p, q) for p in range(4) for q in range(4) if p + q <= 3]


def rasterize(polygon: Polygon, width: int, height: int) -> BinaryMask:
    """Rasterize a polygon with the even-odd rule sampled at pixel centers.

    Pixel (x, y) is on iff its center (x + 0.5, y + 0.5) lies inside the
    polygon; anything outside the image is clipped.  A polygon that covers no
    pixel center yields an all-off mask (use ``mask.empty`` to detect the
    degenerate case) rather than raising.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be >= 1")
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    verts = polygon.vertices
    for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
        if y0 == y1:
            continue
        crossed = (y0 > ys) != (y1 > ys)
        if not crossed.any():
            continue
        yc = ys[crossed]
        x_cross = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
        inside[crossed] ^= xs[None, :] < x_cross[:, None]
    return BinaryMask.from_array(inside)


def _cum1(m: int) -> int:
    return m * (m - 1) // 2


def _cum2(m: int) -> int:
    return m * (m - 1) * (2 * m - 1) // 6


def _cum3(m: int) -> int:
    return _cum1(m) ** 2


def _int_power_sums(a: int, b: int) -> tuple[int, int, int, int]:
    """Exact sums of x^j for x in [a, b), j = 0..3, valid for negative bounds."""
    return b - a, _cum1(b) - _cum1(a), _cum2(b) - _cum2(a), _cum3(b) - _cum3(a)


def _power_sums(x0: int, x1: int) -> tuple[int, int, int, int]:
    """Exact sums of (2x+1)^p for x in [x0, x1), p = 0..3, as Python ints."""
    n, t1, t2, t3 = _int_power_sums(x0, x1)
    u0 = n
    u1 = 2 * t1 + n
    u2 = 4 * t2 + 4 * t1 + n
    u3 = 8 * t3 + 12 * t2 + 6 * t1 + n
    return u0, u1, u2, u3


def _raw_moments_from_runs(mask: BinaryMask) -> dict[tuple[int, int], float]:
    """Raw moments via the run-length layout with exact integer accumulation.

    Terms (x+0.5)^p (y+0.5)^q are scaled by 2^(p+q) to integers, summed
    exactly, and divided back once at the end, so the result does not depend
    on summation order.
    """
    acc = {(p, q): 0 for (p, q) in _MOMENT_ORDERS}
    width = mask.width
    pos = 0
    for i, run in enumerate(mask.runs):
        if i % 2 == 1 and run:
            start, stop = pos, pos + run
            # an on run may span several rows; split at row boundaries
            while start < stop:
                y, x0 = divmod(start, width)
                x1 = min(stop - y * width, width)
                u = _power_sums(x0, x1)
                v = 2 * y + 1
                vq = (1, v, v * v, v * v * v)
                for p, q in _MOMENT_ORDERS:
                    acc[(p, q)] += u[p] * vq[q]
                start = y * width + x1
        pos += run
    return {(p, q): acc[(p, q)] / (1 << (p + q)) for (p, q) in _MOMENT_ORDERS}


def _central_moments_from_runs(
    mask: BinaryMask, cx: float, cy: float
) -> dict[tuple[int, int], float]:
    """Central moments summed directly about (cx, cy).

    Coordinates are re-based to the nearest integer cell of the centroid
    before expanding, which keeps every term at the scale of the mask extent
    instead of the image frame and makes integer translations of the mask
    reproduce bit-identical values.
    """
    kx, ky = math.floor(cx), math.floor(cy)
    dx = 0.5 - (cx - kx)
    dy = 0.5 - (cy - ky)
    dx2, dx3 = dx * dx, dx * dx * dx
    acc = {key: 0.0 for key in _MOMENT_ORDERS}
    width = mask.width
    pos = 0
    for i, run in enumerate(mask.runs):
        if i % 2 == 1 and run:
            start, stop = pos, pos + run
            while start < stop:
                y, x0 = divmod(start, width)
                x1 = min(stop - y * width, width)
                u0, u1, u2, u3 = _int_power_sums(x0 - kx, x1 - kx)
                sx = (
                    float(u0),
                    u1 + dx * u0,
                    u2 + 2 * dx * u1 + dx2 * u0,
                    u3 + 3 * dx * u2 + 3 * dx2 * u1 + dx3 * u0,
                )
                v = (y - ky) + dy
                vq = (1.0, v, v * v, v * v * v)
                for p, q in _MOMENT_ORDERS:
                    acc[(p, q)] += sx[p] * vq[q]
                start = y * width + x1
        pos += run
    return acc


def compute_moments(mask: BinaryMask) -> MomentSet:
    """Raw moments for p+q <= 3 plus central, normalized and Hu invariants.

    Raw moments equal a direct dense double summation over pixel centers
    exactly.  The central moments are taken about the centroid, normalized
    moments are eta_pq = mu_pq / mu_00^(1 + (p+q)/2), and the Hu values are
    the standard seven polynomial combinations of eta.
    """
    raw = _raw_moments_from_runs(mask)
    m00 = raw[(0, 0)]
    if m00 == 0:
        return MomentSet(raw=raw, central=None, normalized=None, hu=None)

    cx = raw[(1, 0)] / m00
    cy = raw[(0, 1)] / m00
    mu = _central_moments_from_runs(mask, cx, cy)
    eta = {
        (p, q): mu[(p, q)] / m00 ** (1 + (p + q) / 2)
        for (p, q) in _MOMENT_ORDERS
        if p + q >= 2
    }

    n20, n02, n11 = eta[(2, 0)], eta[(0, 2)], eta[(1, 1)]
    n30, n03, n21, n12 = eta[(3, 0)], eta[(0, 3)], eta[(2, 1)], eta[(1, 2)]
    a = n30 + n12
    b = n21 + n03
    c = n30 - 3 * n12
    d = 3 * n21 - n03
    hu = (
        n20 + n02,
        (n20 - n02) ** 2 + 4 * n11**2,
        c**2 + d**2,
        a**2 + b**2,
        c * a * (a**2 - 3 * b**2) + d * b * (3 * a**2 - b**2),
        (n20 - n02) * (a**2 - b**2) + 4 * n11 * a * b,
        d * a * (a**2 - 3 * b**2) - c * b * (3 * a**2 - b**2),
    )
    return MomentSet(raw=raw, central=mu, normalized=eta, hu=hu)


def centroid(mask: BinaryMask) -> tuple[float, float]:
    """Center of mass (m10/m00, m01/m00) in pixel-center coordinates."""
    raw = _raw_moments_from_runs(mask)
    m00 = raw[(0, 0)]
    if m00 == 0:
        raise EmptyMaskError("centroid of an empty mask is undefined")
    return raw[(1, 0)] / m00, raw[(0, 1)] / m00


def orientation_from_vertical(mask: BinaryMask) -> Orientation:
    """Angle between the mask's principal (long) axis and the vertical.

    The principal axis comes from theta = 0.5 * atan2(2*mu11, mu20 - mu02);
    0 degrees means the long axis is vertical and positive values mean the
    top of the midline leans toward +x.  Disk-like masks are reported as
    (0.0, degenerate=True).
    """
    moments = compute_moments(mask)
    if not moments.defined:
        raise EmptyMaskError("orientation of an empty mask is undefined")
    mu = moments.central
    m00 = mu[(0, 0)]
    if abs(mu[(2, 0)] - mu[(0, 2)]) + abs(mu[(1, 1)]) <= DEGENERACY_TOLERANCE * m00 * m00:
        return Orientation(0.0, True)
    theta = 0.5 * math.degrees(math.atan2(2 * mu[(1, 1)], mu[(2, 0)] - mu[(0, 2)]))
    angle = theta - 90.0
    if angle <= -90.0:
        angle += 180.0
    return Orientation(angle, False)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two same-sized masks (0 when both empty)."""
    if a.width != b.width or a.height != b.height:
        raise ValueError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    arr_a = a.to_array()
    arr_b = b.to_array()
    union = int(np.logical_or(arr_a, arr_b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(arr_a, arr_b).sum())
    return inter / union
