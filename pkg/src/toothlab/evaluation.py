"""Pixel-level evaluation of predictions against ground truth.

Instances are matched greedily by descending pairwise IoU (threshold 0.5 by
default), pixel confusion is pooled over matched pairs plus the unmatched
leftovers, and the headline IoU/Precision/Recall/F1 numbers are the pooled
(micro) metrics with a per-class breakdown alongside.  A per-round history
backs the optimization line chart and exports as CSV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .masks import BinaryMask

__all__ = [
    "PixelConfusion",
    "EvalReport",
    "InstanceMatching",
    "EvalHistory",
    "DuplicateRoundError",
    "match_instances",
    "evaluate",
    "report_from_confusion",
]


class DuplicateRoundError(ValueError):
    """A round can be recorded in the history only once."""


@dataclass(frozen=True)
class PixelConfusion:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError("confusion counts must be >= 0")

    def __add__(self, other: "PixelConfusion") -> "PixelConfusion":
        return PixelConfusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _ratio(numerator: int, denominator: int) -> tuple[float, bool]:
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


@dataclass(frozen=True)
class EvalReport:
    """Percent metrics plus the raw pooled confusion they derive from."""

    iou: float
    precision: float
    recall: float
    f1: float
    confusion: PixelConfusion
    per_class: dict[str, dict] = field(default_factory=dict)
    matched: int = 0
    unmatched_predictions: int = 0
    unmatched_ground_truth: int = 0
    round_number: int | None = None
    zero_division_flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "round": self.round_number,
            "iou": self.iou,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "fn": self.confusion.fn,
            },
            "per_class": self.per_class,
            "matched": self.matched,
            "unmatched_predictions": self.unmatched_predictions,
            "unmatched_ground_truth": self.unmatched_ground_truth,
            "zero_division_flags": list(self.zero_division_flags),
        }


def report_from_confusion(
    confusion: PixelConfusion,
    per_class: dict[str, dict] | None = None,
    matched: int = 0,
    unmatched_predictions: int = 0,
    unmatched_ground_truth: int = 0,
    round_number: int | None = None,
) -> EvalReport:
    """Build a report from pooled pixel counts (all percentages derived)."""
    iou, f_iou = _ratio(confusion.tp, confusion.tp + confusion.fp + confusion.fn)
    precision, f_p = _ratio(confusion.tp, confusion.tp + confusion.fp)
    recall, f_r = _ratio(confusion.tp, confusion.tp + confusion.fn)
    if precision + recall > 0:
        f1, f_f1 = 2 * precision * recall / (precision + recall), False
    else:
        f1, f_f1 = 0.0, True
    flags = tuple(
        name
        for name, hit in (
            ("iou", f_iou),
            ("precision", f_p),
            ("recall", f_r),
            ("f1", f_f1),
        )
        if hit
    )
    return EvalReport(
        iou=100 * iou,
        precision=100 * precision,
        recall=100 * recall,
        f1=100 * f1,
        confusion=confusion,
        per_class=dict(per_class or {}),
        matched=matched,
        unmatched_predictions=unmatched_predictions,
        unmatched_ground_truth=unmatched_ground_truth,
        round_number=round_number,
        zero_division_flags=flags,
    )


@dataclass(frozen=True)
class InstanceMatching:
    """Greedy one-to-one assignment of predictions to ground truth."""

    pairs: tuple[tuple[int, int, float], ...]  # (pred index, gt index, iou)
    unmatched_predictions: tuple[int, ...]
    unmatched_ground_truth: tuple[int, ...]
    iou_threshold: float


def match_instances(
    predictions: Sequence[BinaryMask],
    ground_truth: Sequence[BinaryMask],
    iou_threshold: float = 0.5,
) -> InstanceMatching:
    """Match instances greedily by descending pairwise IoU.

    Each instance is used at most once; pairs below the threshold stay
    unmatched.  Ties break by (prediction index, ground-truth index) so the
    result is deterministic.
    """
    pred_arrays = [np.asarray(m.to_array()) for m in predictions]
    gt_arrays = [np.asarray(m.to_array()) for m in ground_truth]
    candidates = []
    for i, p in enumerate(pred_arrays):
        p_area = int(p.sum())
        if p_area == 0:
            continue
        for j, g in enumerate(gt_arrays):
            inter = int(np.logical_and(p, g).sum())
            if inter == 0:
                continue
            union = p_area + int(g.sum()) - inter
            value = inter / union
            if value >= iou_threshold:
                candidates.append((-value, i, j))
    candidates.sort()
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for neg_value, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        pairs.append((i, j, -neg_value))
    return InstanceMatching(
        pairs=tuple(pairs),
        unmatched_predictions=tuple(i for i in range(len(predictions)) if i not in used_pred),
        unmatched_ground_truth=tuple(j for j in range(len(ground_truth)) if j not in used_gt),
        iou_threshold=iou_threshold,
    )


def evaluate(
    matching: InstanceMatching,
    predictions: Sequence[BinaryMask],
    ground_truth: Sequence[BinaryMask],
    pred_labels: Sequence[Hashable] | None = None,
    gt_labels: Sequence[Hashable] | None = None,
    round_number: int | None = None,
) -> EvalReport:
    """Pool pixel confusion over the matching and derive the metrics.

    Matched pairs contribute their pixel overlap; pixels of unmatched
    predictions count as false positives and pixels of unmatched ground
    truth as false negatives.  With labels given, a per-class breakdown is
    included (matched pairs keyed by the ground-truth label).
    """
    tp = fp = fn = 0
    per_class_counts: dict[str, PixelConfusion] = {}

    def class_add(label, delta: PixelConfusion):
        if label is None:
            return
        key = str(label)
        per_class_counts[key] = per_class_counts.get(key, PixelConfusion(0, 0, 0)) + delta

    for i, j, _ in matching.pairs:
        p = predictions[i].to_array()
        g = ground_truth[j].to_array()
        inter = int(np.logical_and(p, g).sum())
        p_area = predictions[i].area
        g_area = ground_truth[j].area
        tp += inter
        fp += p_area - inter
        fn += g_area - inter
        label = gt_labels[j] if gt_labels is not None else None
        class_add(label, PixelConfusion(inter, p_area - inter, g_area - inter))
    for i in matching.unmatched_predictions:
        area = predictions[i].area
        fp += area
        label = pred_labels[i] if pred_labels is not None else None
        class_add(label, PixelConfusion(0, area, 0))
    for j in matching.unmatched_ground_truth:
        area = ground_truth[j].area
        fn += area
        label = gt_labels[j] if gt_labels is not None else None
        class_add(label, PixelConfusion(0, 0, area))

    per_class = {}
    for label in sorted(per_class_counts):
        c = per_class_counts[label]
        sub = report_from_confusion(c)
        per_class[label] = {
            "iou": sub.iou,
            "precision": sub.precision,
            "recall": sub.recall,
            "f1": sub.f1,
            "tp": c.tp,
            "fp": c.fp,
            "fn": c.fn,
        }
    return report_from_confusion(
        PixelConfusion(tp, fp, fn),
        per_class=per_class,
        matched=len(matching.pairs),
        unmatched_predictions=len(matching.unmatched_predictions),
        unmatched_ground_truth=len(matching.unmatched_ground_truth),
        round_number=round_number,
    )


class EvalHistory:
    """Append-only per-round evaluation series."""

    def __init__(self):
        self._by_round: dict[int, EvalReport] = {}

    def record_round(self, report: EvalReport, round_number: int) -> EvalReport:
        if round_number in self._by_round:
            raise DuplicateRoundError(f"round {round_number} is already recorded")
        stamped = EvalReport(
            iou=report.iou,
            precision=report.precision,
            recall=report.recall,
            f1=report.f1,
            confusion=report.confusion,
            per_class=report.per_class,
            matched=report.matched,
            unmatched_predictions=report.unmatched_predictions,
            unmatched_ground_truth=report.unmatched_ground_truth,
            round_number=round_number,
            zero_division_flags=report.zero_division_flags,
        )
        self._by_round[round_number] = stamped
        return stamped

    def __len__(self) -> int:
        return len(self._by_round)

    def series(self) -> list[EvalReport]:
        return [self._by_round[r] for r in sorted(self._by_round)]

    def to_csv(self) -> str:
        lines = ["round,iou,precision,recall,f1"]
        for report in self.series():
            lines.append(
                f"{report.round_number},{report.iou!r},{report.precision!r},"
                f"{report.recall!r},{report.f1!r}"
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> list[dict]:
        return [report.to_json() for report in self.series()]

    def dump(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, payload: list[dict]) -> "EvalHistory":
        history = cls()
        for entry in payload:
            report = report_from_confusion(
                PixelConfusion(**entry["confusion"]),
                per_class=entry.get("per_class"),
                matched=entry.get("matched", 0),
                unmatched_predictions=entry.get("unmatched_predictions", 0),
                unmatched_ground_truth=entry.get("unmatched_ground_truth", 0),
            )
            history.record_round(report, entry["round"])
        return history
