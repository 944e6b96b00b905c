"""Session state shared by the CLI and the HTTP service.

Bundles the annotation store, the segmentation backend, derived-feature
caches, the projection model, and the evaluation history, and persists them
under one data directory (``snapshot.json``, ``edits.ndjson``,
``history.json``).  Every committed mutation bumps a session revision
counter; per-image locks serialize writers on the same radiograph while
edits on different images proceed in parallel.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from pathlib import Path

from .config import Config
from .evaluation import EvalHistory, EvalReport, PixelConfusion, evaluate, match_instances, report_from_confusion
from .features import (
    DeviationSummary,
    FeatureVector,
    ProjectionModel,
    classify_deviation,
    extract_features,
    fit_class_stats,
    fit_projection,
    nearest_neighbors,
    project,
)
from .gateway import (
    ArrangementTemplate,
    HttpBackend,
    LearningCurve,
    MockBackend,
    TrainingCoordinator,
    TrainingRound,
    arrangement_relabel,
)
from .masks import BinaryMask, rasterize
from .store import (
    SOURCE_CORRECTED,
    SOURCE_GROUND_TRUTH,
    SOURCE_MODEL,
    AnnotationStore,
    IngestReport,
    ToothInstance,
)

__all__ = ["Workspace", "AnomalyRow"]

SNAPSHOT_FILE = "snapshot.json"
EDIT_LOG_FILE = "edits.ndjson"
HISTORY_FILE = "history.json"
TRAINING_FILE = "training.json"


class AnomalyRow(dict):
    """One anomaly-report line: dict with a fixed key set, json-ready."""


def make_backend(config: Config):
    if config.backend == "mock":
        return MockBackend(
            seed=config.mock_seed,
            curve=LearningCurve(
                start=config.mock_iou_start,
                limit=config.mock_iou_limit,
                decay=config.mock_decay,
            ),
        )
    return HttpBackend(config.backend)


class Workspace:
    def __init__(self, config: Config, store: AnnotationStore | None = None):
        self.config = config
        self.data_dir = Path(config.data_dir)
        if store is None:
            store = self._load_store()
        self.store = store
        self.backend = make_backend(config)
        self.template = ArrangementTemplate(
            sequence=tuple(config.template),
            confidence_threshold=config.confidence_threshold,
        )
        self.coordinator = TrainingCoordinator(self.backend, self.store)
        self.history = self._load_history()
        self._load_training_state()
        self.revision = 0
        self.projection: ProjectionModel | None = None
        self.projection_revision: int | None = None
        self._stats_cache: tuple[int, object] | None = None
        self._feature_cache: dict[tuple[int, int], FeatureVector] = {}
        self._revision_lock = threading.Lock()
        self._image_locks: dict[int, threading.Lock] = defaultdict(threading.Lock)
        self._image_locks_guard = threading.Lock()

    # --- persistence -------------------------------------------------------

    def _load_store(self) -> AnnotationStore:
        snapshot = self.data_dir / SNAPSHOT_FILE
        log = self.data_dir / EDIT_LOG_FILE
        if snapshot.exists():
            store = AnnotationStore.load(snapshot, log if log.exists() else None)
        else:
            store = AnnotationStore()
        self.data_dir.mkdir(parents=True, exist_ok=True)
        store.attach_log(log)
        return store

    def _load_history(self) -> EvalHistory:
        path = self.data_dir / HISTORY_FILE
        if path.exists():
            return EvalHistory.from_json(json.loads(path.read_text()))
        return EvalHistory()

    def _load_training_state(self):
        """Restore round numbering and the mock learning-curve position."""
        path = self.data_dir / TRAINING_FILE
        if not path.exists():
            return
        state = json.loads(path.read_text())
        if hasattr(self.backend, "cumulative_samples"):
            self.backend.cumulative_samples = int(state.get("cumulative_samples", 0))
        reports = {r.round_number: r for r in self.history.series()}
        for entry in state.get("rounds", []):
            training_round = TrainingRound(
                number=int(entry["round"]),
                sample_ids=tuple(entry["sample_ids"]),
                status=str(entry["status"]),
                metrics=reports.get(int(entry["round"])),
                job_id=entry.get("job_id"),
            )
            self.coordinator.rounds.append(training_round)
            if training_round.status in ("submitted", "running"):
                self.coordinator._running = training_round
        self.coordinator._next_number = int(state.get("next_round_number", 1))

    def save(self):
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.store.save_snapshot(self.data_dir / SNAPSHOT_FILE)
        payload = json.dumps(self.history.to_json(), sort_keys=True, indent=1)
        (self.data_dir / HISTORY_FILE).write_text(payload + "\n")
        training_state = {
            "format_version": 1,
            "cumulative_samples": getattr(self.backend, "cumulative_samples", 0),
            "next_round_number": self.coordinator._next_number,
            "rounds": [
                {
                    "round": r.number,
                    "sample_ids": list(r.sample_ids),
                    "status": r.status,
                    "job_id": r.job_id,
                }
                for r in self.coordinator.rounds
            ],
        }
        (self.data_dir / TRAINING_FILE).write_text(
            json.dumps(training_state, sort_keys=True, indent=1) + "\n"
        )

    # --- revision / locking --------------------------------------------------

    def bump_revision(self) -> int:
        with self._revision_lock:
            self.revision += 1
            return self.revision

    def image_lock(self, image_id: int) -> threading.Lock:
        with self._image_locks_guard:
            return self._image_locks[image_id]

    # --- dataset operations ----------------------------------------------------

    def ingest_document(self, document: dict) -> IngestReport:
        report = self.store.ingest(document)
        self.bump_revision()
        return report

    def instance(self, instance_id: int) -> ToothInstance:
        instance = self.store.instances.get(instance_id)
        if instance is None:
            raise KeyError(f"unknown instance id {instance_id}")
        return instance

    def mask_of(self, instance: ToothInstance) -> BinaryMask:
        image = self.store.images[instance.image_id]
        return rasterize(instance.polygon, image.width, image.height)

    def features_of(self, instance: ToothInstance) -> FeatureVector:
        key = (instance.id, instance.last_modified_seq)
        cached = self._feature_cache.get(key)
        if cached is not None:
            return cached
        image = self.store.images[instance.image_id]
        vector = extract_features(self.mask_of(instance), image.width, image.height)
        self._feature_cache[key] = vector
        return vector

    def _samples(self, instances) -> list[tuple[FeatureVector, str]]:
        samples = []
        for instance in instances:
            try:
                samples.append((self.features_of(instance), instance.tooth_class))
            except ValueError:
                continue  # degenerate rasterization; nothing to measure
        return samples

    # --- edits (per-image writer sessions) -----------------------------------

    def edit_move_vertex(self, instance_id, index, x, y, actor="expert") -> ToothInstance:
        instance = self.instance(instance_id)
        with self.image_lock(instance.image_id):
            updated = self.store.move_vertex(instance_id, index, x, y, actor=actor)
        self.bump_revision()
        return updated

    def edit_replace_polygon(self, instance_id, polygon, actor="expert") -> ToothInstance:
        instance = self.instance(instance_id)
        with self.image_lock(instance.image_id):
            updated = self.store.replace_polygon(instance_id, polygon, actor=actor)
        self.bump_revision()
        return updated

    def edit_set_label(self, instance_id, tooth_class, actor="expert") -> ToothInstance:
        instance = self.instance(instance_id)
        with self.image_lock(instance.image_id):
            updated = self.store.set_label(instance_id, tooth_class, actor=actor)
        self.bump_revision()
        return updated

    def edit_set_selected(self, instance_id, flag, actor="expert") -> ToothInstance:
        instance = self.instance(instance_id)
        with self.image_lock(instance.image_id):
            updated = self.store.set_selected(instance_id, flag, actor=actor)
        self.bump_revision()
        return updated

    def trusted_instances(self) -> list[ToothInstance]:
        """The reference pool: expert-owned labels (ground truth + corrected)."""
        return [
            inst
            for inst in sorted(self.store.instances.values(), key=lambda i: i.id)
            if inst.source in (SOURCE_GROUND_TRUTH, SOURCE_CORRECTED)
        ]

    def class_stats(self):
        key = (self.revision, self.store.last_seq)
        if self._stats_cache is not None and self._stats_cache[0] == key:
            return self._stats_cache[1]
        pool = self.trusted_instances()
        if not pool:
            pool = sorted(self.store.instances.values(), key=lambda i: i.id)
        stats = fit_class_stats(self._samples(pool))
        self._stats_cache = (key, stats)
        return stats

    def deviation_of(self, instance: ToothInstance) -> DeviationSummary:
        return classify_deviation(
            self.features_of(instance),
            self.class_stats(),
            instance.tooth_class,
            z_threshold=self.config.z_threshold,
        )

    # --- segmentation ------------------------------------------------------------

    def segment_image(self, image_id: int) -> list[ToothInstance]:
        """Ask the backend for predictions and store them as model instances."""
        image = self.store.images.get(image_id)
        if image is None:
            raise KeyError(f"unknown image id {image_id}")
        predictions = self.backend.segment(image)
        predictions = arrangement_relabel(predictions, image.width, self.template)
        created = []
        with self.image_lock(image_id):
            for prediction in predictions:
                created.append(
                    self.store.add_instance(
                        image_id=image_id,
                        tooth_class=prediction.tooth_class,
                        polygon=prediction.polygon,
                        source=SOURCE_MODEL,
                        confidence=prediction.confidence,
                    )
                )
        self.bump_revision()
        return created

    # --- projection ------------------------------------------------------------

    def refit_projection(self) -> ProjectionModel:
        """Fit on the trusted pool (all instances if it cannot support a fit)."""
        trusted = self._samples(self.trusted_instances())
        by_class: dict[str, int] = {}
        for _, label in trusted:
            by_class[label] = by_class.get(label, 0) + 1
        if sum(1 for n in by_class.values() if n >= 2) >= 2:
            samples = trusted
        else:
            samples = self._samples(sorted(self.store.instances.values(), key=lambda i: i.id))
        model = fit_projection(samples)
        self.projection = model
        self.projection_revision = self.bump_revision()
        return model

    def require_projection(self) -> ProjectionModel:
        if self.projection is None:
            self.refit_projection()
        return self.projection

    def marker_of(self, instance: ToothInstance) -> str:
        if instance.selected_for_training:
            return "expert"
        if instance.source == SOURCE_GROUND_TRUTH:
            return "train"
        return "new"

    def projection_points(self) -> list[dict]:
        model = self.require_projection()
        points = []
        for instance in sorted(self.store.instances.values(), key=lambda i: i.id):
            try:
                vector = self.features_of(instance)
            except ValueError:
                continue
            x, y = project(model, vector)
            points.append(
                {
                    "instance_id": instance.id,
                    "image_id": instance.image_id,
                    "class": instance.tooth_class,
                    "x": x,
                    "y": y,
                    "marker": self.marker_of(instance),
                    "source": instance.source,
                    "selected": instance.selected_for_training,
                }
            )
        return points

    def similar_to(self, instance_id: int, k: int | None = None) -> list[dict]:
        """Nearest labeled instances in the projected plane, with slice boxes."""
        k = self.config.neighbors if k is None else k
        instance = self.instance(instance_id)
        model = self.require_projection()
        query = project(model, self.features_of(instance))
        labeled = []
        for candidate in self.trusted_instances():
            if candidate.id == instance_id:
                continue
            try:
                vector = self.features_of(candidate)
            except ValueError:
                continue
            labeled.append((candidate.id, project(model, vector)))
        if not labeled:
            return []
        results = []
        for neighbor_id, distance in nearest_neighbors(query, labeled, k):
            neighbor = self.store.instances[neighbor_id]
            x0, y0, x1, y1 = neighbor.polygon.bounds
            results.append(
                {
                    "instance_id": neighbor_id,
                    "distance": distance,
                    "image_id": neighbor.image_id,
                    "class": neighbor.tooth_class,
                    "bbox": [x0, y0, x1, y1],
                }
            )
        return results

    # --- anomaly report -----------------------------------------------------------

    def anomaly_report(self, z_threshold: float | None = None) -> list[AnomalyRow]:
        """All instances ranked by how many dimensions sit outside their band."""
        model = self.require_projection()
        stats = self.class_stats()
        z = self.config.z_threshold if z_threshold is None else z_threshold
        rows = []
        for instance in sorted(self.store.instances.values(), key=lambda i: i.id):
            try:
                vector = self.features_of(instance)
            except ValueError:
                continue
            summary = classify_deviation(vector, stats, instance.tooth_class, z_threshold=z)
            x, y = project(model, vector)
            rows.append(
                AnomalyRow(
                    instance_id=instance.id,
                    image_id=instance.image_id,
                    tooth_class=instance.tooth_class,
                    flags=[f.value for f in summary.flags],
                    anomaly_count=summary.anomaly_count,
                    unusable_class=summary.unusable_class,
                    x=x,
                    y=y,
                )
            )
        rows.sort(key=lambda row: (-row["anomaly_count"], row["instance_id"]))
        return rows

    # --- training loop ---------------------------------------------------------------

    def train(self, sample_ids) -> "TrainingRound":
        """Submit one feedback round and record its metrics in the history."""
        if len(self.history) == 0 and isinstance(self.backend, MockBackend):
            self.history.record_round(self.backend.baseline_report(), 0)
        training_round = self.coordinator.submit(sample_ids)
        if training_round.status == "done":
            self.history.record_round(training_round.metrics, training_round.number)
        self.bump_revision()
        return training_round

    def poll_round(self, number: int) -> "TrainingRound":
        before = None
        existing = self.coordinator.round_by_number(number)
        if existing is not None:
            before = existing.status
        training_round = self.coordinator.poll(number)
        if training_round.status == "done" and before != "done":
            self.history.record_round(training_round.metrics, training_round.number)
            self.bump_revision()
        return training_round

    # --- file evaluation ---------------------------------------------------------------

    def features_csv(self) -> str:
        header = "instance_id,image_id,class," + ",".join(
            ("hu1", "hu2", "hu3", "hu4", "hu5", "hu6", "hu7", "dx", "dy", "angle")
        )
        lines = [header]
        for instance in sorted(self.store.instances.values(), key=lambda i: i.id):
            try:
                vector = self.features_of(instance)
            except ValueError:
                continue
            values = ",".join(repr(float(v)) for v in vector.as_array())
            lines.append(
                f"{instance.id},{instance.image_id},{instance.tooth_class},{values}"
            )
        return "\n".join(lines) + "\n"


def evaluate_documents(pred_document: dict, gt_document: dict) -> EvalReport:
    """Pixel metrics of one annotation document against another.

    Masks are rasterized per image (sizes from the ground-truth catalog),
    matched greedily within each image, and the confusion is pooled across
    images into one report with a per-class breakdown.
    """
    gt_store = AnnotationStore()
    gt_store.ingest(gt_document)
    pred_store = AnnotationStore()
    pred_store.ingest(pred_document)

    total = PixelConfusion(0, 0, 0)
    per_class: dict[str, PixelConfusion] = {}
    matched = unmatched_p = unmatched_g = 0
    for image_id, image in sorted(gt_store.images.items()):
        gt_instances = gt_store.instances_of(image_id)
        pred_instances = pred_store.instances_of(image_id)
        gt_masks = [rasterize(i.polygon, image.width, image.height) for i in gt_instances]
        pred_masks = [rasterize(i.polygon, image.width, image.height) for i in pred_instances]
        matching = match_instances(pred_masks, gt_masks)
        report = evaluate(
            matching,
            pred_masks,
            gt_masks,
            pred_labels=[i.tooth_class for i in pred_instances],
            gt_labels=[i.tooth_class for i in gt_instances],
        )
        total = total + report.confusion
        matched += report.matched
        unmatched_p += report.unmatched_predictions
        unmatched_g += report.unmatched_ground_truth
        for label, metrics in report.per_class.items():
            delta = PixelConfusion(metrics["tp"], metrics["fp"], metrics["fn"])
            per_class[label] = per_class.get(label, PixelConfusion(0, 0, 0)) + delta

    class_reports = {}
    for label in sorted(per_class):
        c = per_class[label]
        sub = report_from_confusion(c)
        class_reports[label] = {
            "iou": sub.iou,
            "precision": sub.precision,
            "recall": sub.recall,
            "f1": sub.f1,
            "tp": c.tp,
            "fp": c.fp,
            "fn": c.fn,
        }
    return report_from_confusion(
        total,
        per_class=class_reports,
        matched=matched,
        unmatched_predictions=unmatched_p,
        unmatched_ground_truth=unmatched_g,
    )
