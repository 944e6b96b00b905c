"""Per-instance metric vectors, class statistics, deviation flags, and the
supervised 2-D discriminant projection.

A metric vector has 10 dimensions in the fixed order
``[hu1..hu7, dx, dy, angle]``: the seven Hu invariants (signed-log
compressed), the absolute centroid offsets from the image center, and the
midline tilt from vertical.  Fitting returns immutable models; extraction,
projection and neighbor queries are pure functions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .masks import BinaryMask, centroid, compute_moments, orientation_from_vertical

__all__ = [
    "FEATURE_DIM_NAMES",
    "FeatureVector",
    "ClassStats",
    "DeviationFlag",
    "DeviationSummary",
    "ProjectionModel",
    "ProjectionError",
    "extract_features",
    "fit_class_stats",
    "classify_deviation",
    "fit_projection",
    "project",
    "nearest_neighbors",
]

FEATURE_DIM_NAMES = ("hu1", "hu2", "hu3", "hu4", "hu5", "hu6", "hu7", "dx", "dy", "angle")

# guards log10 of an exactly-zero invariant
_LOG_EPS = 1e-30


class ProjectionError(ValueError):
    """Raised when the class structure cannot support a discriminant fit."""


@dataclass(frozen=True)
class FeatureVector:
    """10-dimensional metric vector for one segmented tooth."""

    hu: tuple[float, float, float, float, float, float, float]
    dx: float
    dy: float
    angle: float
    degenerate_angle: bool = False

    def __post_init__(self):
        values = (*self.hu, self.dx, self.dy, self.angle)
        if len(self.hu) != 7:
            raise ValueError("expected 7 hu components")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("feature values must be finite")
        if self.dx < 0 or self.dy < 0:
            raise ValueError("center offsets are absolute and must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([*self.hu, self.dx, self.dy, self.angle], dtype=float)

    @classmethod
    def from_array(cls, values, degenerate_angle: bool = False) -> "FeatureVector":
        values = [float(v) for v in values]
        if len(values) != len(FEATURE_DIM_NAMES):
            raise ValueError(f"expected {len(FEATURE_DIM_NAMES)} values")
        return cls(
            hu=tuple(values[:7]),
            dx=values[7],
            dy=values[8],
            angle=values[9],
            degenerate_angle=degenerate_angle,
        )

    def to_json(self) -> dict:
        return {
            "values": [float(v) for v in self.as_array()],
            "dimensions": list(FEATURE_DIM_NAMES),
            "degenerate_angle": self.degenerate_angle,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FeatureVector":
        values = payload["values"]
        return cls(
            hu=tuple(float(v) for v in values[:7]),
            dx=float(values[7]),
            dy=float(values[8]),
            angle=float(values[9]),
            degenerate_angle=bool(payload.get("degenerate_angle", False)),
        )


class DeviationFlag(enum.Enum):
    BELOW = "below"
    NEAR = "near"
    ABOVE = "above"


@dataclass(frozen=True)
class DeviationSummary:
    """Per-dimension deviation flags plus a marker for unusable class stats."""

    flags: tuple[DeviationFlag, ...]
    unusable_class: bool = False

    @property
    def anomaly_count(self) -> int:
        return sum(1 for f in self.flags if f is not DeviationFlag.NEAR)

    def to_json(self) -> dict:
        return {
            "flags": [f.value for f in self.flags],
            "unusable_class": self.unusable_class,
        }


@dataclass(frozen=True)
class ClassEntry:
    count: int
    mean: np.ndarray
    std: np.ndarray

    @property
    def usable(self) -> bool:
        return self.count >= 2


@dataclass(frozen=True)
class ClassStats:
    """Per-class, per-dimension mean and population standard deviation."""

    classes: dict[Hashable, ClassEntry]

    def entry(self, label: Hashable) -> ClassEntry | None:
        return self.classes.get(label)

    def to_json(self) -> dict:
        return {
            "dimensions": list(FEATURE_DIM_NAMES),
            "classes": {
                str(label): {
                    "count": e.count,
                    "mean": [float(v) for v in e.mean],
                    "std": [float(v) for v in e.std],
                    "usable": e.usable,
                }
                for label, e in sorted(self.classes.items(), key=lambda kv: str(kv[0]))
            },
        }


@dataclass(frozen=True)
class ProjectionModel:
    """Fitted Fisher discriminant transform onto a 2-D plane.

    ``basis`` columns are unit-norm discriminant directions over standardized
    features; projecting the global mean gives exactly (0, 0).
    """

    basis: np.ndarray  # (10, 2)
    global_mean: np.ndarray  # (10,)
    global_scale: np.ndarray  # (10,), per-dimension std used to standardize
    epsilon: float
    class_means_2d: dict[Hashable, tuple[float, float]]

    def to_json(self) -> dict:
        return {
            "dimensions": list(FEATURE_DIM_NAMES),
            "basis": [[float(v) for v in row] for row in self.basis],
            "global_mean": [float(v) for v in self.global_mean],
            "global_scale": [float(v) for v in self.global_scale],
            "epsilon": self.epsilon,
            "class_means_2d": {
                str(label): [float(x), float(y)]
                for label, (x, y) in sorted(self.class_means_2d.items(), key=lambda kv: str(kv[0]))
            },
        }


def signed_log_compress(value: float) -> float:
    """-sign(v) * log10(|v| + eps); spreads Hu values across a usable range."""
    return -math.copysign(1.0, value) * math.log10(abs(value) + _LOG_EPS)


def extract_features(mask: BinaryMask, image_width: int, image_height: int) -> FeatureVector:
    """Build the metric vector of a mask within its image frame.

    The Hu invariants are signed-log compressed; dx/dy are the absolute
    centroid offsets from the frame center; the angle falls back to 0 with
    ``degenerate_angle`` set for disk-like masks.
    """
    if mask.empty:
        raise ValueError("cannot extract features from an empty mask")
    if mask.width != image_width or mask.height != image_height:
        raise ValueError("mask frame does not match the image dimensions")
    moments = compute_moments(mask)
    hu = tuple(signed_log_compress(v) for v in moments.hu)
    cx, cy = centroid(mask)
    angle, degenerate = orientation_from_vertical(mask)
    return FeatureVector(
        hu=hu,
        dx=abs(cx - image_width / 2),
        dy=abs(cy - image_height / 2),
        angle=angle,
        degenerate_angle=degenerate,
    )


def fit_class_stats(samples: Iterable[tuple[FeatureVector, Hashable]]) -> ClassStats:
    """Per-class mean and population std over the 10 dimensions.

    Classes with fewer than two samples are kept but marked unusable.
    """
    grouped: dict[Hashable, list[np.ndarray]] = {}
    for vector, label in samples:
        grouped.setdefault(label, []).append(vector.as_array())
    classes = {}
    for label, rows in grouped.items():
        data = np.vstack(rows)
        classes[label] = ClassEntry(
            count=len(rows),
            mean=data.mean(axis=0),
            std=data.std(axis=0),
        )
    return ClassStats(classes=classes)


def classify_deviation(
    vector: FeatureVector,
    stats: ClassStats,
    label: Hashable,
    z_threshold: float = 1.0,
) -> DeviationSummary:
    """Flag each dimension as below/near/above its class band.

    The band is mean +- z_threshold * std with strict inequalities, so a
    value exactly on the edge is still near.  Zero-std dimensions flag by
    the sign of the difference alone.  An unusable class (fewer than two
    samples) yields all-near flags with ``unusable_class`` set.
    """
    entry = stats.entry(label)
    if entry is None or not entry.usable:
        return DeviationSummary(
            flags=tuple(DeviationFlag.NEAR for _ in FEATURE_DIM_NAMES),
            unusable_class=True,
        )
    values = vector.as_array()
    flags = []
    for v, mean, std in zip(values, entry.mean, entry.std):
        if v > mean + z_threshold * std:
            flags.append(DeviationFlag.ABOVE)
        elif v < mean - z_threshold * std:
            flags.append(DeviationFlag.BELOW)
        else:
            flags.append(DeviationFlag.NEAR)
    return DeviationSummary(flags=tuple(flags))


def _standardize(data: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = data.mean(axis=0)
    scale = data.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (data - mean) / scale, mean, scale


def fit_projection(
    samples: Sequence[tuple[FeatureVector, Hashable]],
    epsilon: float = 1e-6,
) -> ProjectionModel:
    """Fit Fisher's linear discriminant and keep the two leading directions.

    Features are standardized per dimension first so pixel offsets and
    degrees cannot dominate the log-compressed shape values.  The basis
    solves the generalized eigenproblem of between-class versus within-class
    scatter, with a ridge term epsilon * trace(S_w)/10 on S_w for
    invertibility.  Each basis column is unit length with its
    largest-magnitude entry positive, and samples are canonically ordered
    before any accumulation, so refits are bit-reproducible regardless of
    input order.
    """
    usable: dict[Hashable, list[np.ndarray]] = {}
    for vector, label in samples:
        usable.setdefault(label, []).append(vector.as_array())
    usable = {label: rows for label, rows in usable.items() if len(rows) >= 2}
    if len(usable) < 2:
        raise ProjectionError("need at least two classes with two samples each")

    # canonical order: by class name, then lexicographically by values
    labels_sorted = sorted(usable, key=str)
    rows = []
    for label in labels_sorted:
        rows.extend(sorted(usable[label], key=tuple))
    data = np.vstack(rows)
    z, mean, scale = _standardize(data)

    dim = z.shape[1]
    s_w = np.zeros((dim, dim))
    s_b = np.zeros((dim, dim))
    global_mean_z = z.mean(axis=0)
    offset = 0
    class_means_z = {}
    for label in labels_sorted:
        n = len(usable[label])
        block = z[offset : offset + n]
        offset += n
        mu_c = block.mean(axis=0)
        class_means_z[label] = mu_c
        centered = block - mu_c
        s_w += centered.T @ centered
        diff = (mu_c - global_mean_z)[:, None]
        s_b += n * (diff @ diff.T)

    if np.trace(s_b) <= 1e-12 * max(1.0, np.trace(s_w)):
        raise ProjectionError("degenerate class structure: identical class means")

    ridge = epsilon * np.trace(s_w) / dim
    eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w + ridge * np.eye(dim))
    order = np.argsort(eigvals)[::-1][:2]
    basis = eigvecs[:, order]
    for j in range(basis.shape[1]):
        column = basis[:, j]
        column /= np.linalg.norm(column)
        if column[np.argmax(np.abs(column))] < 0:
            column *= -1
        basis[:, j] = column

    class_means_2d = {
        label: tuple((mu_c - global_mean_z) @ basis)
        for label, mu_c in class_means_z.items()
    }
    # fold the standardized-space offset into the stored mean so that
    # project() is a plain standardize-then-multiply
    return ProjectionModel(
        basis=basis,
        global_mean=mean + global_mean_z * scale,
        global_scale=scale,
        epsilon=epsilon,
        class_means_2d=class_means_2d,
    )


def project(model: ProjectionModel, vector: FeatureVector) -> tuple[float, float]:
    """Standardize against the fit pool and drop onto the 2-D basis."""
    z = (vector.as_array() - model.global_mean) / model.global_scale
    x, y = z @ model.basis
    return float(x), float(y)


def fisher_criterion(
    samples: Sequence[tuple[FeatureVector, Hashable]],
    direction: np.ndarray,
    model: ProjectionModel,
) -> float:
    """Between/within variance ratio of standardized samples along a direction."""
    data = np.vstack([v.as_array() for v, _ in samples])
    labels = [label for _, label in samples]
    z = (data - model.global_mean) / model.global_scale
    w = np.asarray(direction, dtype=float)
    w = w / np.linalg.norm(w)
    scores = z @ w
    overall = scores.mean()
    between = 0.0
    within = 0.0
    for label in set(labels):
        values = scores[[i for i, l in enumerate(labels) if l == label]]
        if len(values) < 2:
            continue
        between += len(values) * (values.mean() - overall) ** 2
        within += ((values - values.mean()) ** 2).sum()
    return between / within if within > 0 else math.inf


def nearest_neighbors(
    query: tuple[float, float],
    labeled: Sequence[tuple[Hashable, tuple[float, float]]],
    k: int,
) -> list[tuple[Hashable, float]]:
    """The k closest labeled points by Euclidean distance, ascending.

    Ties break by ascending instance id; asking for more points than exist
    returns them all.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    qx, qy = query
    ranked = sorted(
        ((math.hypot(x - qx, y - qy), instance_id) for instance_id, (x, y) in labeled),
    )
    return [(instance_id, dist) for dist, instance_id in ranked[:k]]
