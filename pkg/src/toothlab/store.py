"""Dataset model and persistence for radiographs and tooth instances.

Instances carry provenance (``ground_truth`` | ``model`` | ``corrected``) and
every mutation flows through an append-only edit log, so replaying the log
over a snapshot reproduces the exact current state.  Interchange uses a
COCO-style polygon JSON document; persistence is a snapshot JSON plus a
newline-delimited JSON edit log, both versioned.

Thread-safety: commits (sequence assignment, instance mutation, log append)
serialize through one internal lock; reads see the latest committed edit.
Callers that need per-image write sessions layer their own image locks on
top, as the HTTP service does.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .masks import Polygon

__all__ = [
    "TOOTH_CLASSES",
    "SOURCE_GROUND_TRUTH",
    "SOURCE_MODEL",
    "SOURCE_CORRECTED",
    "PanoramicImage",
    "ToothInstance",
    "EditRecord",
    "EditRejected",
    "IngestReport",
    "AnnotationStore",
    "load_annotation_document",
    "ParseError",
]

FORMAT_VERSION = 1

TOOTH_CLASSES = ("incisor", "canine", "molar1", "molar2", "molar3")

SOURCE_GROUND_TRUTH = "ground_truth"
SOURCE_MODEL = "model"
SOURCE_CORRECTED = "corrected"
_SOURCES = (SOURCE_GROUND_TRUTH, SOURCE_MODEL, SOURCE_CORRECTED)

# accepted spellings for the closed 5-class scheme; anything else is reported
CATEGORY_SYNONYMS = {
    "incisor": "incisor",
    "incisors": "incisor",
    "canine": "canine",
    "canines": "canine",
    "cuspid": "canine",
    "cuspids": "canine",
    "molar1": "molar1",
    "1st molar": "molar1",
    "first molar": "molar1",
    "molar2": "molar2",
    "2nd molar": "molar2",
    "second molar": "molar2",
    "molar3": "molar3",
    "3rd molar": "molar3",
    "third molar": "molar3",
}

EDIT_KINDS = ("move_vertex", "set_label", "replace_polygon", "select", "mark_round")


class EditRejected(ValueError):
    """Raised when an edit would violate an instance invariant."""


class ParseError(ValueError):
    """Malformed annotation document, with position info when available."""


@dataclass
class PanoramicImage:
    id: int
    file_name: str
    width: int
    height: int
    contrast: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0.25 <= self.contrast <= 4.0:
            raise ValueError("contrast must be within [0.25, 4.0]")


@dataclass
class ToothInstance:
    id: int
    image_id: int
    tooth_class: str
    polygon: Polygon
    source: str
    confidence: float | None = None
    selected_for_training: bool = False
    created_round: int = 0
    # sequence number of the last edit touching this instance (0 = never)
    last_modified_seq: int = 0

    def __post_init__(self):
        if self.tooth_class not in TOOTH_CLASSES:
            raise ValueError(f"unknown tooth class {self.tooth_class!r}")
        if self.source not in _SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == SOURCE_GROUND_TRUTH and self.confidence is not None:
            raise ValueError("ground-truth instances carry no confidence")
        if self.source == SOURCE_MODEL and self.confidence is None:
            raise ValueError("model instances require a confidence")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")


@dataclass(frozen=True)
class EditRecord:
    seq: int
    instance_id: int
    kind: str
    payload: dict
    actor: str
    timestamp: float

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "instance_id": self.instance_id,
            "kind": self.kind,
            "payload": self.payload,
            "actor": self.actor,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EditRecord":
        return cls(
            seq=int(payload["seq"]),
            instance_id=int(payload["instance_id"]),
            kind=str(payload["kind"]),
            payload=dict(payload["payload"]),
            actor=str(payload["actor"]),
            timestamp=float(payload["timestamp"]),
        )


@dataclass
class IngestReport:
    images_added: int = 0
    instances_added: int = 0
    skipped: list[tuple[object, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.skipped


def _polygon_to_flat(polygon: Polygon) -> list[float]:
    flat: list[float] = []
    for x, y in polygon.vertices:
        flat.extend((x, y))
    return flat


def _polygon_from_flat(flat: Iterable[float]) -> Polygon:
    flat = [float(v) for v in flat]
    if len(flat) % 2 != 0:
        raise ValueError("segmentation list must hold x,y pairs")
    return Polygon(list(zip(flat[0::2], flat[1::2])))


def load_annotation_document(path: str | Path) -> dict:
    """Parse an annotation file, reporting line/column on malformed JSON."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


_NAMED_FILTERS: dict[str, Callable[[ToothInstance], bool]] = {
    "all": lambda inst: True,
    "selected": lambda inst: inst.selected_for_training,
    "ground_truth": lambda inst: inst.source == SOURCE_GROUND_TRUTH,
    "model": lambda inst: inst.source == SOURCE_MODEL,
    "corrected": lambda inst: inst.source == SOURCE_CORRECTED,
    "labeled": lambda inst: inst.source in (SOURCE_GROUND_TRUTH, SOURCE_CORRECTED),
}


class AnnotationStore:
    """In-memory dataset with an append-only edit log and snapshot I/O."""

    def __init__(self):
        self.images: dict[int, PanoramicImage] = {}
        self.instances: dict[int, ToothInstance] = {}
        self.last_seq = 0
        self.edit_log: list[EditRecord] = []
        self._next_instance_id = 1
        self._next_image_id = 1
        self._commit_lock = threading.Lock()
        self._log_path: Path | None = None

    # --- construction -----------------------------------------------------

    def add_image(
        self,
        file_name: str,
        width: int,
        height: int,
        image_id: int | None = None,
        contrast: float = 1.0,
    ) -> PanoramicImage:
        with self._commit_lock:
            if image_id is None:
                image_id = self._next_image_id
            if image_id in self.images:
                raise ValueError(f"image id {image_id} already exists")
            image = PanoramicImage(
                id=image_id, file_name=file_name, width=width, height=height, contrast=contrast
            )
            self.images[image_id] = image
            self._next_image_id = max(self._next_image_id, image_id + 1)
            return image

    def add_instance(
        self,
        image_id: int,
        tooth_class: str,
        polygon: Polygon,
        source: str,
        confidence: float | None = None,
        instance_id: int | None = None,
        selected_for_training: bool = False,
        created_round: int = 0,
    ) -> ToothInstance:
        with self._commit_lock:
            if image_id not in self.images:
                raise ValueError(f"unknown image id {image_id}")
            if instance_id is None:
                instance_id = self._next_instance_id
            if instance_id in self.instances:
                raise ValueError(f"instance id {instance_id} already exists")
            instance = ToothInstance(
                id=instance_id,
                image_id=image_id,
                tooth_class=tooth_class,
                polygon=polygon,
                source=source,
                confidence=confidence,
                selected_for_training=selected_for_training,
                created_round=created_round,
            )
            self.instances[instance_id] = instance
            # ids are never reused, even after deletions
            self._next_instance_id = max(self._next_instance_id, instance_id + 1)
            return instance

    def instances_of(self, image_id: int) -> list[ToothInstance]:
        return sorted(
            (inst for inst in self.instances.values() if inst.image_id == image_id),
            key=lambda inst: inst.id,
        )

    # --- edits --------------------------------------------------------------

    def new_edit(
        self,
        instance_id: int,
        kind: str,
        payload: dict,
        actor: str = "expert",
        timestamp: float | None = None,
    ) -> EditRecord:
        """Build a record with the next sequence number (does not apply it)."""
        if kind not in EDIT_KINDS:
            raise ValueError(f"unknown edit kind {kind!r}")
        ts = time.time() if timestamp is None else float(timestamp)
        return EditRecord(
            seq=self.last_seq + 1,
            instance_id=instance_id,
            kind=kind,
            payload=payload,
            actor=actor,
            timestamp=ts,
        )

    def apply_edit(self, record: EditRecord) -> ToothInstance:
        """Validate and commit one edit; rejected edits leave state unchanged.

        The first geometry or label edit of a model instance turns it into a
        corrected one (confidence retained as the link to the model output).
        Edits are history: moving a vertex back does not undo the provenance
        change.
        """
        with self._commit_lock:
            instance = self.instances.get(record.instance_id)
            if instance is None:
                raise EditRejected(f"unknown instance id {record.instance_id}")
            if record.seq <= self.last_seq:
                raise EditRejected(
                    f"stale sequence number {record.seq} (last is {self.last_seq})"
                )

            kind, payload = record.kind, record.payload
            if kind == "move_vertex":
                index = int(payload["index"])
                if not 0 <= index < len(instance.polygon.vertices):
                    raise EditRejected(f"vertex index {index} out of range")
                new_polygon = self._validated_polygon(
                    instance.polygon.with_vertex(index, payload["x"], payload["y"])
                )
                instance.polygon = new_polygon
                self._mark_corrected(instance)
            elif kind == "replace_polygon":
                new_polygon = self._validated_polygon(
                    _polygon_from_flat(payload["vertices"])
                )
                instance.polygon = new_polygon
                self._mark_corrected(instance)
            elif kind == "set_label":
                label = payload["tooth_class"]
                if label not in TOOTH_CLASSES:
                    raise EditRejected(f"unknown tooth class {label!r}")
                instance.tooth_class = label
                self._mark_corrected(instance)
            elif kind == "select":
                flag = bool(payload["flag"])
                if flag and instance.source == SOURCE_MODEL:
                    raise EditRejected(
                        "unreviewed model output cannot be selected for training"
                    )
                instance.selected_for_training = flag
            elif kind == "mark_round":
                instance.created_round = int(payload["round"])
            else:
                raise EditRejected(f"unknown edit kind {kind!r}")

            instance.last_modified_seq = record.seq
            self.last_seq = record.seq
            self.edit_log.append(record)
            if self._log_path is not None:
                with open(self._log_path, "a") as fh:
                    fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
            return instance

    @staticmethod
    def _validated_polygon(polygon: Polygon) -> Polygon:
        if len(set(polygon.vertices)) < 3:
            raise EditRejected("polygon needs at least 3 distinct vertices")
        return polygon

    @staticmethod
    def _mark_corrected(instance: ToothInstance):
        if instance.source == SOURCE_MODEL:
            instance.source = SOURCE_CORRECTED

    # convenience wrappers used by the service and the CLI

    def move_vertex(self, instance_id, index, x, y, actor="expert", timestamp=None):
        record = self.new_edit(
            instance_id, "move_vertex", {"index": index, "x": x, "y": y}, actor, timestamp
        )
        return self.apply_edit(record)

    def replace_polygon(self, instance_id, polygon: Polygon, actor="expert", timestamp=None):
        record = self.new_edit(
            instance_id,
            "replace_polygon",
            {"vertices": _polygon_to_flat(polygon)},
            actor,
            timestamp,
        )
        return self.apply_edit(record)

    def set_label(self, instance_id, tooth_class, actor="expert", timestamp=None):
        record = self.new_edit(
            instance_id, "set_label", {"tooth_class": tooth_class}, actor, timestamp
        )
        return self.apply_edit(record)

    def set_selected(self, instance_id, flag, actor="expert", timestamp=None):
        record = self.new_edit(instance_id, "select", {"flag": flag}, actor, timestamp)
        return self.apply_edit(record)

    def mark_round(self, instance_id, round_number, actor="system", timestamp=None):
        record = self.new_edit(
            instance_id, "mark_round", {"round": round_number}, actor, timestamp
        )
        return self.apply_edit(record)

    # --- interchange ---------------------------------------------------------

    def ingest(self, document: dict) -> IngestReport:
        """Add images and polygon annotations from a COCO-style document.

        Unknown categories, missing image references, duplicate ids and
        model annotations without a score are skipped and reported; the rest
        of the document still loads.
        """
        report = IngestReport()
        if not isinstance(document, dict):
            raise ParseError("annotation document must be a JSON object")
        for key in ("images", "annotations", "categories"):
            if not isinstance(document.get(key), list):
                raise ParseError(f"annotation document is missing the {key}[] list")

        category_names: dict[int, str] = {}
        for cat in document["categories"]:
            category_names[int(cat["id"])] = str(cat["name"])

        for entry in document["images"]:
            try:
                image_id = int(entry["id"])
                if image_id in self.images:
                    report.skipped.append((f"image {image_id}", "duplicate image id"))
                    continue
                self.add_image(
                    file_name=str(entry["file_name"]),
                    width=int(entry["width"]),
                    height=int(entry["height"]),
                    image_id=image_id,
                    contrast=float(entry.get("contrast", 1.0)),
                )
                report.images_added += 1
            except (KeyError, TypeError, ValueError) as exc:
                report.skipped.append((f"image {entry.get('id')}", str(exc)))

        for ann in document["annotations"]:
            ann_id = ann.get("id")
            try:
                image_id = int(ann["image_id"])
                if image_id not in self.images:
                    report.skipped.append((ann_id, f"references missing image {image_id}"))
                    continue
                name = category_names.get(int(ann["category_id"]))
                if name is None:
                    report.skipped.append((ann_id, f"unknown category id {ann['category_id']}"))
                    continue
                tooth_class = CATEGORY_SYNONYMS.get(name.strip().lower())
                if tooth_class is None:
                    report.skipped.append((ann_id, f"unmapped category {name!r}"))
                    continue
                segmentation = ann["segmentation"]
                if segmentation and isinstance(segmentation[0], (list, tuple)):
                    if len(segmentation) != 1:
                        report.skipped.append((ann_id, "multi-part segmentation unsupported"))
                        continue
                    segmentation = segmentation[0]
                polygon = _polygon_from_flat(segmentation)
                source = str(ann.get("source", SOURCE_GROUND_TRUTH))
                if source not in _SOURCES:
                    report.skipped.append((ann_id, f"unknown source {source!r}"))
                    continue
                confidence = ann.get("score")
                if source == SOURCE_MODEL and confidence is None:
                    report.skipped.append((ann_id, "model annotation lacks a score"))
                    continue
                if source == SOURCE_GROUND_TRUTH and confidence is not None:
                    report.skipped.append((ann_id, "ground-truth annotation carries a score"))
                    continue
                self.add_instance(
                    image_id=image_id,
                    tooth_class=tooth_class,
                    polygon=polygon,
                    source=source,
                    confidence=None if confidence is None else float(confidence),
                    instance_id=None if ann_id is None else int(ann_id),
                    selected_for_training=bool(ann.get("selected", False)),
                    created_round=int(ann.get("created_round", 0)),
                )
                report.instances_added += 1
            except (KeyError, TypeError, ValueError) as exc:
                report.skipped.append((ann_id, str(exc)))
        return report

    def export(self, selector: str | Callable[[ToothInstance], bool] = "all") -> dict:
        """COCO-style document of the instances passing the filter.

        Output ordering is stable (by id); an empty selection yields an
        explicit empty document.  Corrected instances export their final
        polygon and class.
        """
        if callable(selector):
            predicate = selector
        else:
            try:
                predicate = _NAMED_FILTERS[selector]
            except KeyError:
                raise ValueError(
                    f"unknown filter {selector!r}; expected one of {sorted(_NAMED_FILTERS)}"
                ) from None
        chosen = sorted(
            (inst for inst in self.instances.values() if predicate(inst)),
            key=lambda inst: inst.id,
        )
        # the image catalog is not filtered, only the annotations are
        image_ids = sorted(self.images)
        class_ids = {name: i + 1 for i, name in enumerate(TOOTH_CLASSES)}
        annotations = []
        for inst in chosen:
            ann = {
                "id": inst.id,
                "image_id": inst.image_id,
                "category_id": class_ids[inst.tooth_class],
                "segmentation": [_polygon_to_flat(inst.polygon)],
                "source": inst.source,
            }
            if inst.confidence is not None:
                ann["score"] = inst.confidence
            if inst.selected_for_training:
                ann["selected"] = True
            if inst.created_round:
                ann["created_round"] = inst.created_round
            annotations.append(ann)
        return {
            "format_version": FORMAT_VERSION,
            "images": [
                {
                    "id": img.id,
                    "file_name": img.file_name,
                    "width": img.width,
                    "height": img.height,
                    "contrast": img.contrast,
                }
                for img in (self.images[i] for i in image_ids)
            ],
            "categories": [
                {"id": class_ids[name], "name": name} for name in TOOTH_CLASSES
            ],
            "annotations": annotations,
        }

    # --- persistence ----------------------------------------------------------

    def attach_log(self, path: str | Path):
        """Append every committed edit to ``path`` as NDJSON from now on.

        A fresh log starts with a version header line; replay skips any line
        that is not an edit record.
        """
        self._log_path = Path(path)
        if not self._log_path.exists() or self._log_path.stat().st_size == 0:
            with open(self._log_path, "w") as fh:
                fh.write(json.dumps({"format_version": FORMAT_VERSION}) + "\n")

    def snapshot(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "last_seq": self.last_seq,
            "next_instance_id": self._next_instance_id,
            "next_image_id": self._next_image_id,
            "images": [
                {
                    "id": img.id,
                    "file_name": img.file_name,
                    "width": img.width,
                    "height": img.height,
                    "contrast": img.contrast,
                }
                for img in sorted(self.images.values(), key=lambda i: i.id)
            ],
            "instances": [
                {
                    "id": inst.id,
                    "image_id": inst.image_id,
                    "tooth_class": inst.tooth_class,
                    "polygon": _polygon_to_flat(inst.polygon),
                    "source": inst.source,
                    "confidence": inst.confidence,
                    "selected_for_training": inst.selected_for_training,
                    "created_round": inst.created_round,
                    "last_modified_seq": inst.last_modified_seq,
                }
                for inst in sorted(self.instances.values(), key=lambda i: i.id)
            ],
        }

    def save_snapshot(self, path: str | Path):
        Path(path).write_text(json.dumps(self.snapshot(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_snapshot(cls, snapshot: dict) -> "AnnotationStore":
        store = cls()
        if snapshot.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"unsupported snapshot version {snapshot.get('format_version')}")
        for img in snapshot["images"]:
            store.add_image(
                file_name=img["file_name"],
                width=img["width"],
                height=img["height"],
                image_id=img["id"],
                contrast=img.get("contrast", 1.0),
            )
        for data in snapshot["instances"]:
            instance = store.add_instance(
                image_id=data["image_id"],
                tooth_class=data["tooth_class"],
                polygon=_polygon_from_flat(data["polygon"]),
                source=data["source"],
                confidence=data["confidence"],
                instance_id=data["id"],
                selected_for_training=data["selected_for_training"],
                created_round=data["created_round"],
            )
            instance.last_modified_seq = data.get("last_modified_seq", 0)
        store.last_seq = snapshot["last_seq"]
        store._next_instance_id = snapshot["next_instance_id"]
        store._next_image_id = snapshot["next_image_id"]
        return store

    @classmethod
    def load(cls, snapshot_path: str | Path, log_path: str | Path | None = None) -> "AnnotationStore":
        """Snapshot plus replay of any log records newer than the snapshot."""
        snapshot = json.loads(Path(snapshot_path).read_text())
        store = cls.from_snapshot(snapshot)
        if log_path is not None and Path(log_path).exists():
            with open(log_path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    data = json.loads(line)
                    if "seq" not in data:
                        continue  # version header / non-record line
                    record = EditRecord.from_json(data)
                    if record.seq <= store.last_seq:
                        continue
                    store.apply_edit(record)
        return store

    def state_digest(self) -> str:
        """Canonical JSON of the full dataset state, for equality checks."""
        return json.dumps(self.snapshot(), sort_keys=True)
