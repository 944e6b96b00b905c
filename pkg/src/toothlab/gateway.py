"""Pluggable segmentation backend and the training-round lifecycle.

Two backends satisfy the same contract: an HTTP client for a real
inference/training service (JSON over ``POST /v1/segment``, ``POST
/v1/train`` and ``GET /v1/train/{job}``) and a fully deterministic mock for
desk-scale operation.  The arrangement-order relabeling heuristic lives here
too: low-confidence predictions take the class their ordinal position along
the dental arch dictates.

At most one training round is in flight at a time; a failed round keeps its
samples selected and releases its round number to the next attempt, so the
history of completed rounds is strictly increasing and gap-free.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace

import numpy as np
import requests

from .evaluation import EvalReport, PixelConfusion, report_from_confusion
from .masks import Polygon
from .store import TOOTH_CLASSES, AnnotationStore
from . import synthetic

__all__ = [
    "Prediction",
    "ArrangementTemplate",
    "DEFAULT_ARRANGEMENT",
    "TrainingRound",
    "TransportError",
    "ProtocolError",
    "RoundInProgress",
    "InvalidSubmission",
    "arrangement_relabel",
    "MockBackend",
    "HttpBackend",
    "TrainingCoordinator",
]


class TransportError(RuntimeError):
    """The backend could not be reached or answered with a server fault."""

    def __init__(self, message: str, retriable: bool = True, attempts: int = 1):
        super().__init__(message)
        self.retriable = retriable
        self.attempts = attempts


class ProtocolError(ValueError):
    """The backend answered, but the payload violates the wire contract."""


class RoundInProgress(RuntimeError):
    def __init__(self, running_number: int):
        super().__init__(f"training round {running_number} is still running")
        self.running_number = running_number


class InvalidSubmission(ValueError):
    """Sample ids do not refer to selected-for-training instances."""


@dataclass(frozen=True)
class Prediction:
    polygon: Polygon
    tooth_class: str
    confidence: float

    def __post_init__(self):
        if self.tooth_class not in TOOTH_CLASSES:
            raise ValueError(f"unknown tooth class {self.tooth_class!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class ArrangementTemplate:
    """Expected per-quadrant class sequence from the midline outward."""

    sequence: tuple[str, ...]
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if not self.sequence:
            raise ValueError("template sequence may not be empty")
        for name in self.sequence:
            if name not in TOOTH_CLASSES:
                raise ValueError(f"unknown tooth class {name!r} in template")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence threshold must be within [0, 1]")


DEFAULT_ARRANGEMENT = ArrangementTemplate(
    sequence=(
        "incisor",
        "incisor",
        "canine",
        "molar1",
        "molar1",
        "molar1",
        "molar2",
        "molar3",
    ),
    confidence_threshold=0.5,
)


@dataclass
class TrainingRound:
    number: int
    sample_ids: tuple[int, ...]
    status: str  # submitted | running | done | failed
    metrics: EvalReport | None = None
    job_id: str | None = None

    def to_json(self) -> dict:
        return {
            "round": self.number,
            "sample_ids": list(self.sample_ids),
            "status": self.status,
            "metrics": None if self.metrics is None else self.metrics.to_json(),
            "job_id": self.job_id,
        }


def _polygon_centroid(polygon: Polygon) -> tuple[float, float]:
    """Area centroid by the shoelace formula (vertex mean when degenerate)."""
    area2 = 0.0
    cx = 0.0
    cy = 0.0
    verts = polygon.vertices
    for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
        cross = x0 * y1 - x1 * y0
        area2 += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    if abs(area2) < 1e-12:
        xs = [x for x, _ in verts]
        ys = [y for _, y in verts]
        return sum(xs) / len(xs), sum(ys) / len(ys)
    return cx / (3 * area2), cy / (3 * area2)


def _jaw_split(cys: list[float]) -> float:
    """Horizontal midline between the two jaw clusters (1-D two-means)."""
    threshold = sum(cys) / len(cys)
    for _ in range(100):
        upper = [y for y in cys if y < threshold]
        lower = [y for y in cys if y >= threshold]
        if not upper or not lower:
            return threshold
        new = (sum(upper) / len(upper) + sum(lower) / len(lower)) / 2
        if new == threshold:
            break
        threshold = new
    return threshold


def arrangement_relabel(
    predictions: list[Prediction],
    image_width: int,
    template: ArrangementTemplate = DEFAULT_ARRANGEMENT,
) -> list[Prediction]:
    """Relabel low-confidence predictions by their arch position.

    Predictions split into quadrants (left/right of the vertical midline,
    upper/lower jaw by the split between jaw centroids) and are ordered
    within each quadrant by distance from the midline.  A prediction whose
    confidence is below the template threshold takes the template class at
    its ordinal position; confident predictions and positions beyond the
    template are left alone.  Geometry and confidence never change, so the
    operation is idempotent.
    """
    if not predictions:
        return []
    centroids = [_polygon_centroid(p.polygon) for p in predictions]
    jaw_line = _jaw_split([cy for _, cy in centroids])
    half = image_width / 2
    quadrants: dict[tuple[bool, bool], list[tuple[float, int]]] = {}
    for index, (cx, cy) in enumerate(centroids):
        key = (cy >= jaw_line, cx >= half)
        quadrants.setdefault(key, []).append((abs(cx - half), index))
    relabeled = list(predictions)
    for members in quadrants.values():
        members.sort()
        for ordinal, (_, index) in enumerate(members):
            prediction = predictions[index]
            if prediction.confidence >= template.confidence_threshold:
                continue
            if ordinal >= len(template.sequence):
                continue
            relabeled[index] = replace(prediction, tooth_class=template.sequence[ordinal])
    return relabeled


@dataclass
class LearningCurve:
    """Mock improvement rule: iou(n) = limit - (limit - start) * exp(-n/decay).

    The defaults (0.75 to 0.85, decay 300) are simulation parameters chosen
    to give three 100-sample rounds a visible, monotone improvement; they are
    not measurements.
    """

    start: float = 0.75
    limit: float = 0.85
    decay: float = 300.0

    def iou_at(self, cumulative_samples: int) -> float:
        return self.limit - (self.limit - self.start) * math.exp(
            -cumulative_samples / self.decay
        )


def _summary_from_iou(iou_fraction: float, round_number: int | None = None) -> EvalReport:
    """Synthesize a consistent pixel confusion that realizes a target IoU."""
    total = 1_000_000
    tp = round(iou_fraction * total)
    rest = total - tp
    fp = round(0.4 * rest)
    fn = rest - fp
    return report_from_confusion(PixelConfusion(tp, fp, fn), round_number=round_number)


class MockBackend:
    """Deterministic desk-scale backend.

    Segmentation regenerates the canonical synthetic teeth for the image id
    under this backend's seed and perturbs them slightly; two teeth per image
    are deliberately corrupted (one displaced far off its arch slot, one
    given a confusable label) with low confidence, which gives the anomaly
    and relabeling flows something real to find.  Training completes
    synchronously and walks the learning curve by cumulative sample count.
    """

    def __init__(self, seed: int = 42, curve: LearningCurve | None = None):
        self.seed = int(seed)
        self.curve = curve or LearningCurve()
        self.cumulative_samples = 0
        self._jobs: dict[str, EvalReport] = {}
        self._job_counter = 0

    def baseline_report(self) -> EvalReport:
        return _summary_from_iou(self.curve.iou_at(0))

    def segment(self, image) -> list[Prediction]:
        teeth = synthetic.ground_truth_teeth(
            self.seed, image.id, image.width, image.height
        )
        rng = synthetic.prediction_rng(self.seed, image.id)
        unit = image.height / 500.0
        displaced = int(rng.integers(0, len(teeth)))
        mislabeled = int(rng.integers(0, len(teeth) - 1))
        if mislabeled >= displaced:
            mislabeled += 1
        predictions = []
        for index, (polygon, tooth_class) in enumerate(teeth):
            jitter = rng.normal(0.0, 0.4 * unit, size=(len(polygon.vertices), 2))
            shift_x, shift_y = rng.normal(0.0, 1.2 * unit, size=2)
            confidence = float(np.clip(rng.normal(0.84, 0.07), 0.30, 0.99))
            if index == displaced:
                shift_y += 55.0 * unit
                confidence = float(np.clip(rng.normal(0.38, 0.04), 0.05, 0.49))
            elif index == mislabeled:
                tooth_class = "molar1" if tooth_class == "canine" else "canine"
                confidence = float(np.clip(rng.normal(0.42, 0.04), 0.05, 0.49))
            vertices = [
                (max(0.0, x + shift_x + dx), max(0.0, y + shift_y + dy))
                for (x, y), (dx, dy) in zip(polygon.vertices, jitter)
            ]
            predictions.append(
                Prediction(
                    polygon=Polygon(vertices),
                    tooth_class=tooth_class,
                    confidence=confidence,
                )
            )
        return predictions

    def submit_training(self, document: dict) -> str:
        self.cumulative_samples += len(document.get("annotations", []))
        self._job_counter += 1
        job_id = f"mock-{self._job_counter}"
        self._jobs[job_id] = _summary_from_iou(self.curve.iou_at(self.cumulative_samples))
        return job_id

    def training_status(self, job_id: str) -> tuple[str, EvalReport | None]:
        if job_id not in self._jobs:
            raise ProtocolError(f"unknown training job {job_id!r}")
        return "done", self._jobs[job_id]


class HttpBackend:
    """Client for a remote segmentation/training service (JSON over HTTP)."""

    def __init__(self, base_url: str, timeout: float = 10.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        try:
            response = self._session.post(url, json=payload, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"backend unreachable at {url}: {exc}") from exc
        return self._parse(response, url)

    def _get(self, path: str) -> dict:
        url = f"{self.base_url}{path}"
        try:
            response = self._session.get(url, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"backend unreachable at {url}: {exc}") from exc
        return self._parse(response, url)

    @staticmethod
    def _parse(response, url: str) -> dict:
        if response.status_code >= 500:
            raise TransportError(f"{url} answered HTTP {response.status_code}")
        if response.status_code != 200:
            raise ProtocolError(f"{url} answered HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProtocolError(f"{url} returned non-JSON body") from exc

    def segment(self, image) -> list[Prediction]:
        payload = self._post(
            "/v1/segment",
            {
                "api_version": 1,
                "image": {
                    "id": image.id,
                    "file_name": image.file_name,
                    "width": image.width,
                    "height": image.height,
                },
            },
        )
        raw = payload.get("predictions")
        if not isinstance(raw, list):
            raise ProtocolError("payload field 'predictions' missing or not a list")
        predictions = []
        for index, entry in enumerate(raw):
            predictions.append(self._parse_prediction(entry, index))
        return predictions

    @staticmethod
    def _parse_prediction(entry: dict, index: int) -> Prediction:
        where = f"predictions[{index}]"
        tooth_class = entry.get("class")
        if tooth_class not in TOOTH_CLASSES:
            raise ProtocolError(f"{where}.class unknown: {tooth_class!r}")
        confidence = entry.get("confidence")
        if not isinstance(confidence, (int, float)) or not 0.0 <= confidence <= 1.0:
            raise ProtocolError(f"{where}.confidence out of range: {confidence!r}")
        flat = entry.get("polygon")
        if not isinstance(flat, list) or len(flat) < 6 or len(flat) % 2:
            raise ProtocolError(f"{where}.polygon must be a flat x,y list of >= 3 points")
        try:
            polygon = Polygon(list(zip(flat[0::2], flat[1::2])))
        except ValueError as exc:
            raise ProtocolError(f"{where}.polygon invalid: {exc}") from exc
        return Prediction(polygon=polygon, tooth_class=tooth_class, confidence=float(confidence))

    def submit_training(self, document: dict) -> str:
        payload = self._post("/v1/train", {"api_version": 1, "annotations": document})
        job_id = payload.get("job_id")
        if not isinstance(job_id, str) or not job_id:
            raise ProtocolError("payload field 'job_id' missing")
        return job_id

    def training_status(self, job_id: str) -> tuple[str, EvalReport | None]:
        payload = self._get(f"/v1/train/{job_id}")
        status = payload.get("status")
        if status not in ("submitted", "running", "done", "failed"):
            raise ProtocolError(f"payload field 'status' invalid: {status!r}")
        metrics = None
        if status == "done":
            data = payload.get("metrics")
            if not isinstance(data, dict):
                raise ProtocolError("done status requires a 'metrics' object")
            try:
                confusion = PixelConfusion(
                    tp=int(data["tp"]), fp=int(data["fp"]), fn=int(data["fn"])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"metrics object invalid: {exc}") from exc
            metrics = report_from_confusion(confusion)
        return status, metrics


class TrainingCoordinator:
    """Serializes training rounds: one in flight, numbers gap-free."""

    def __init__(self, backend, store: AnnotationStore):
        self.backend = backend
        self.store = store
        self.rounds: list[TrainingRound] = []
        self._next_number = 1
        self._running: TrainingRound | None = None
        self._lock = threading.Lock()

    @property
    def running_round(self) -> TrainingRound | None:
        return self._running

    def round_by_number(self, number: int) -> TrainingRound | None:
        for training_round in reversed(self.rounds):
            if training_round.number == number:
                return training_round
        return None

    def submit(self, sample_ids) -> TrainingRound:
        """Feed the selected samples back to the backend as one round."""
        with self._lock:
            if self._running is not None:
                raise RoundInProgress(self._running.number)
            ids = tuple(int(i) for i in sample_ids)
            if not ids:
                raise InvalidSubmission("no sample ids given")
            for sample_id in ids:
                instance = self.store.instances.get(sample_id)
                if instance is None:
                    raise InvalidSubmission(f"unknown sample id {sample_id}")
                if not instance.selected_for_training:
                    raise InvalidSubmission(
                        f"sample {sample_id} is not selected for training"
                    )
            training_round = TrainingRound(
                number=self._next_number, sample_ids=ids, status="submitted"
            )
            self.rounds.append(training_round)
            self._running = training_round

        id_set = set(ids)
        document = self.store.export(lambda inst: inst.id in id_set)
        try:
            training_round.job_id = self.backend.submit_training(document)
        except TransportError:
            with self._lock:
                training_round.status = "failed"
                self._running = None
            raise
        return self.poll(training_round.number)

    def poll(self, number: int) -> TrainingRound:
        """Refresh a round from the backend; completes or fails it."""
        training_round = self.round_by_number(number)
        if training_round is None:
            raise InvalidSubmission(f"no round {number}")
        if training_round.status in ("done", "failed") or training_round.job_id is None:
            return training_round
        try:
            status, metrics = self.backend.training_status(training_round.job_id)
        except TransportError:
            # leave the round running; a later poll may still reach the backend
            raise
        with self._lock:
            if status == "done":
                training_round.status = "done"
                training_round.metrics = replace(
                    metrics, round_number=training_round.number
                )
                self._next_number = training_round.number + 1
                self._running = None
            elif status == "failed":
                training_round.status = "failed"
                self._running = None
                # number released: samples stay selected for the next attempt
            else:
                training_round.status = "running"
        if training_round.status == "done":
            for sample_id in training_round.sample_ids:
                self.store.mark_round(sample_id, training_round.number, actor="trainer")
        return training_round
