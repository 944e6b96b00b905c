import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from toothlab.gateway import (
    DEFAULT_ARRANGEMENT,
    ArrangementTemplate,
    HttpBackend,
    InvalidSubmission,
    MockBackend,
    Prediction,
    ProtocolError,
    RoundInProgress,
    TrainingCoordinator,
    TransportError,
    arrangement_relabel,
    _jaw_split,
    _polygon_centroid,
)
from toothlab.masks import Polygon
from toothlab.store import SOURCE_GROUND_TRUTH, AnnotationStore, PanoramicImage

DATA = Path(__file__).parent / "data"


def tooth_at(cx, cy, cls="incisor", confidence=0.9, size=8.0):
    poly = Polygon(
        [
            (cx - size, cy - size),
            (cx + size, cy - size),
            (cx + size, cy + size),
            (cx - size, cy + size),
        ]
    )
    return Prediction(polygon=poly, tooth_class=cls, confidence=confidence)


def synthetic_image(image_id=1):
    return PanoramicImage(
        id=image_id, file_name=f"synthetic_{image_id}.png", width=1000, height=500
    )


class TestPredictionValidation:
    def test_confidence_range(self):
        with pytest.raises(ValueError, match="confidence"):
            tooth_at(10, 10, confidence=1.3)

    def test_class_closed_set(self):
        with pytest.raises(ValueError, match="tooth class"):
            tooth_at(10, 10, cls="premolar")

    def test_template_validation(self):
        with pytest.raises(ValueError):
            ArrangementTemplate(sequence=())
        with pytest.raises(ValueError):
            ArrangementTemplate(sequence=("incisor",), confidence_threshold=1.5)


class TestArrangementRelabel:
    def test_confident_predictions_untouched(self):
        preds = [
            tooth_at(520, 150, "molar2", 0.8),
            tooth_at(560, 150, "molar3", 0.95),
            tooth_at(520, 350, "incisor", 0.51),
        ]
        assert arrangement_relabel(preds, 1000) == preds

    def test_low_confidence_third_from_midline(self):
        # quadrant upper-right: ordinals 0,1,2 from the midline; the third
        # slot of the default template is a canine
        preds = [
            tooth_at(520, 150, "incisor", 0.9),
            tooth_at(560, 150, "incisor", 0.9),
            tooth_at(600, 150, "molar3", 0.3),
            tooth_at(520, 350, "incisor", 0.9),  # lower jaw anchor
        ]
        out = arrangement_relabel(preds, 1000, DEFAULT_ARRANGEMENT)
        assert out[2].tooth_class == "canine"
        assert out[2].confidence == preds[2].confidence
        assert out[2].polygon == preds[2].polygon

    def test_positions_beyond_template_keep_label(self):
        template = ArrangementTemplate(sequence=("incisor",), confidence_threshold=0.9)
        preds = [
            tooth_at(520, 150, "molar2", 0.1),
            tooth_at(560, 150, "molar3", 0.1),
        ]
        out = arrangement_relabel(preds, 1000, template)
        assert out[0].tooth_class == "incisor"
        assert out[1].tooth_class == "molar3"

    def test_empty_input(self):
        assert arrangement_relabel([], 1000) == []

    def test_idempotent_and_geometry_preserving(self):
        rng = np.random.default_rng(5)
        preds = []
        for _ in range(40):
            preds.append(
                tooth_at(
                    float(rng.uniform(100, 900)),
                    float(rng.uniform(100, 400)),
                    ["incisor", "canine", "molar1", "molar2", "molar3"][int(rng.integers(5))],
                    float(rng.uniform(0, 1)),
                )
            )
        once = arrangement_relabel(preds, 1000)
        twice = arrangement_relabel(once, 1000)
        assert once == twice
        for before, after in zip(preds, once):
            assert before.polygon == after.polygon
            assert before.confidence == after.confidence
            if before.confidence >= DEFAULT_ARRANGEMENT.confidence_threshold:
                assert before.tooth_class == after.tooth_class

    def test_matches_rule_trace_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            preds = [
                tooth_at(
                    float(rng.uniform(50, 950)),
                    float(rng.uniform(50, 450)),
                    ["incisor", "canine", "molar1", "molar2", "molar3"][int(rng.integers(5))],
                    float(rng.uniform(0, 1)),
                )
                for _ in range(int(rng.integers(1, 30)))
            ]
            got = arrangement_relabel(preds, 1000, DEFAULT_ARRANGEMENT)

            # independent position-by-position trace of the stated rule
            centers = [_polygon_centroid(p.polygon) for p in preds]
            jaw = _jaw_split([cy for _, cy in centers])
            expected = [p.tooth_class for p in preds]
            for lower in (False, True):
                for right in (False, True):
                    members = [
                        i
                        for i, (cx, cy) in enumerate(centers)
                        if (cy >= jaw) == lower and (cx >= 500) == right
                    ]
                    members.sort(key=lambda i: (abs(centers[i][0] - 500), i))
                    for ordinal, i in enumerate(members):
                        if (
                            preds[i].confidence < 0.5
                            and ordinal < len(DEFAULT_ARRANGEMENT.sequence)
                        ):
                            expected[i] = DEFAULT_ARRANGEMENT.sequence[ordinal]
            assert [p.tooth_class for p in got] == expected


class TestMockBackend:
    def test_matches_frozen_golden_file(self):
        golden = json.loads((DATA / "mock_backend_seed42_image1.json").read_text())
        preds = MockBackend(seed=42).segment(synthetic_image(1))
        assert len(preds) == len(golden["predictions"]) == 28
        for pred, want in zip(preds, golden["predictions"]):
            assert pred.tooth_class == want["class"]
            assert pred.confidence == want["confidence"]
            flat = [c for xy in pred.polygon.vertices for c in xy]
            assert flat == want["polygon"]

    def test_deterministic_across_instances(self):
        a = MockBackend(seed=7).segment(synthetic_image(3))
        b = MockBackend(seed=7).segment(synthetic_image(3))
        assert a == b

    def test_different_seeds_differ(self):
        a = MockBackend(seed=7).segment(synthetic_image(1))
        b = MockBackend(seed=8).segment(synthetic_image(1))
        assert a != b

    def test_learning_curve_monotone(self):
        backend = MockBackend(seed=1)
        base = backend.baseline_report().iou
        job = backend.submit_training({"annotations": [{}] * 100})
        status, first = backend.training_status(job)
        assert status == "done"
        assert first.iou > base
        job2 = backend.submit_training({"annotations": [{}] * 100})
        _, second = backend.training_status(job2)
        assert second.iou > first.iou


def _training_store(n=6):
    store = AnnotationStore()
    store.add_image("a.png", 1000, 500)
    ids = []
    for i in range(n):
        inst = store.add_instance(
            1,
            "incisor",
            Polygon([(10 * i, 0), (10 * i + 8, 0), (10 * i + 4, 9)]),
            SOURCE_GROUND_TRUTH,
        )
        store.set_selected(inst.id, True)
        ids.append(inst.id)
    return store, ids


class TestTrainingCoordinator:
    def test_mock_round_improves_on_baseline(self):
        store, ids = _training_store()
        backend = MockBackend(seed=42)
        coordinator = TrainingCoordinator(backend, store)
        done = coordinator.submit(ids)
        assert done.status == "done"
        assert done.number == 1
        assert done.metrics.iou > backend.baseline_report().iou
        for sample_id in ids:
            assert store.instances[sample_id].created_round == 1

    def test_unselected_sample_rejected_no_round(self):
        store, ids = _training_store()
        unselected = store.add_instance(
            1, "canine", Polygon([(500, 0), (510, 0), (505, 9)]), SOURCE_GROUND_TRUTH
        )
        coordinator = TrainingCoordinator(MockBackend(), store)
        with pytest.raises(InvalidSubmission, match="not selected"):
            coordinator.submit(ids + [unselected.id])
        assert coordinator.rounds == []

    def test_three_rounds_strictly_increasing(self):
        store, ids = _training_store()
        coordinator = TrainingCoordinator(MockBackend(seed=42), store)
        numbers = []
        ious = []
        for _ in range(3):
            done = coordinator.submit(ids)
            numbers.append(done.number)
            ious.append(done.metrics.iou)
        assert numbers == [1, 2, 3]
        assert ious[0] < ious[1] < ious[2]

    def test_concurrent_submission_rejected(self):
        class NeverDone(MockBackend):
            def training_status(self, job_id):
                return "running", None

        store, ids = _training_store()
        coordinator = TrainingCoordinator(NeverDone(), store)
        running = coordinator.submit(ids)
        assert running.status == "running"
        with pytest.raises(RoundInProgress) as info:
            coordinator.submit(ids)
        assert info.value.running_number == running.number

    def test_failed_round_releases_number_and_keeps_selection(self):
        class FlakyTrainer(MockBackend):
            def __init__(self):
                super().__init__(seed=1)
                self.fail_next = True

            def submit_training(self, document):
                if self.fail_next:
                    self.fail_next = False
                    raise TransportError("trainer offline")
                return super().submit_training(document)

        store, ids = _training_store()
        coordinator = TrainingCoordinator(FlakyTrainer(), store)
        with pytest.raises(TransportError):
            coordinator.submit(ids)
        assert coordinator.rounds[0].status == "failed"
        assert all(store.instances[i].selected_for_training for i in ids)
        done = coordinator.submit(ids)
        assert done.number == 1  # the failed attempt released its number
        assert done.status == "done"


class _FakeBackendHandler(BaseHTTPRequestHandler):
    behavior = "ok"

    def log_message(self, *args):
        pass

    def _send(self, status, payload):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("content-type", "application/json")
        self.send_header("content-length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("content-length", 0))
        self.rfile.read(length)
        if self.path == "/v1/segment":
            if self.behavior == "ok":
                self._send(
                    200,
                    {
                        "predictions": [
                            {
                                "polygon": [0.0, 0.0, 10.0, 0.0, 5.0, 12.0],
                                "class": "incisor",
                                "confidence": 0.75,
                            }
                        ]
                    },
                )
            elif self.behavior == "empty":
                self._send(200, {"predictions": []})
            elif self.behavior == "bad_confidence":
                self._send(
                    200,
                    {
                        "predictions": [
                            {
                                "polygon": [0.0, 0.0, 10.0, 0.0, 5.0, 12.0],
                                "class": "incisor",
                                "confidence": 1.3,
                            }
                        ]
                    },
                )
            elif self.behavior == "server_error":
                self._send(500, {"error": "boom"})
        elif self.path == "/v1/train":
            self._send(200, {"job_id": "job-1"})
        else:
            self._send(404, {"error": "not found"})

    def do_GET(self):
        if self.path == "/v1/train/job-1":
            self._send(
                200,
                {"status": "done", "metrics": {"tp": 800000, "fp": 100000, "fn": 100000}},
            )
        else:
            self._send(404, {"error": "not found"})


@pytest.fixture()
def fake_backend_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _FakeBackendHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()


class TestHttpBackend:
    def test_segment_round_trip(self, fake_backend_server):
        _FakeBackendHandler.behavior = "ok"
        backend = HttpBackend(f"http://127.0.0.1:{fake_backend_server.server_port}")
        preds = backend.segment(synthetic_image())
        assert len(preds) == 1
        assert preds[0].tooth_class == "incisor"

    def test_empty_predictions_is_not_an_error(self, fake_backend_server):
        _FakeBackendHandler.behavior = "empty"
        backend = HttpBackend(f"http://127.0.0.1:{fake_backend_server.server_port}")
        assert backend.segment(synthetic_image()) == []

    def test_out_of_range_confidence_names_field(self, fake_backend_server):
        _FakeBackendHandler.behavior = "bad_confidence"
        backend = HttpBackend(f"http://127.0.0.1:{fake_backend_server.server_port}")
        with pytest.raises(ProtocolError, match=r"predictions\[0\].confidence"):
            backend.segment(synthetic_image())

    def test_server_fault_is_transport_error(self, fake_backend_server):
        _FakeBackendHandler.behavior = "server_error"
        backend = HttpBackend(f"http://127.0.0.1:{fake_backend_server.server_port}")
        with pytest.raises(TransportError):
            backend.segment(synthetic_image())

    def test_unreachable_is_retriable_transport_error(self):
        backend = HttpBackend("http://127.0.0.1:1", timeout=0.2)
        with pytest.raises(TransportError) as info:
            backend.segment(synthetic_image())
        assert info.value.retriable

    def test_training_flow(self, fake_backend_server):
        backend = HttpBackend(f"http://127.0.0.1:{fake_backend_server.server_port}")
        job = backend.submit_training({"annotations": []})
        status, metrics = backend.training_status(job)
        assert status == "done"
        assert metrics.iou == pytest.approx(80.0)
