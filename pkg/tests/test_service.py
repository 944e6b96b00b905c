from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from toothlab.config import Config
from toothlab.service import create_app
from toothlab.synthetic import generate_dataset_document
from toothlab.workspace import Workspace


@pytest.fixture()
def workspace(tmp_path):
    config = Config(data_dir=tmp_path / "ws", mock_seed=42)
    ws = Workspace(config)
    ws.ingest_document(generate_dataset_document(seed=42, n_images=2))
    return ws


@pytest.fixture()
def client(workspace):
    return TestClient(create_app(workspace), raise_server_exceptions=False)


def segment_both(client):
    for image_id in (1, 2):
        assert client.post(f"/api/images/{image_id}/segment").status_code == 200


class TestImagesAndInstances:
    def test_list_images(self, client):
        payload = client.get("/api/images").json()
        assert [img["id"] for img in payload["images"]] == [1, 2]
        assert payload["images"][0]["contrast"] == 1.0

    def test_image_detail_and_404(self, client):
        assert client.get("/api/images/1").json()["width"] == 1000
        response = client.get("/api/images/99")
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_image"

    def test_instances_listing(self, client):
        payload = client.get("/api/images/1/instances").json()
        assert len(payload["instances"]) == 28
        first = payload["instances"][0]
        assert first["source"] == "ground_truth"
        assert len(first["polygon"]) >= 6

    def test_segment_adds_model_instances(self, client):
        response = client.post("/api/images/1/segment")
        payload = response.json()
        assert response.status_code == 200
        assert len(payload["instances"]) == 28
        assert all(inst["source"] == "model" for inst in payload["instances"])
        assert payload["revision"] > 0


class TestFeatureEndpoints:
    def test_features_payload(self, client):
        payload = client.get("/api/instances/1/features").json()
        assert payload["vector"]["dimensions"][:2] == ["hu1", "hu2"]
        assert len(payload["vector"]["values"]) == 10
        assert len(payload["deviation"]["flags"]) == 10
        assert set(payload["deviation"]["flags"]) <= {"below", "near", "above"}

    def test_unknown_instance_404(self, client):
        response = client.get("/api/instances/4040/features")
        assert response.status_code == 404

    def test_similar_delegates_to_nearest_neighbors(self, client, workspace):
        client.post("/api/projection/refit")
        payload = client.get("/api/instances/1/similar", params={"k": 5}).json()
        neighbors = payload["neighbors"]
        assert len(neighbors) == 5
        assert neighbors == workspace.similar_to(1, 5)
        distances = [n["distance"] for n in neighbors]
        assert distances == sorted(distances)
        assert all(len(n["bbox"]) == 4 for n in neighbors)

    def test_classstats_endpoint(self, client):
        payload = client.get("/api/classstats").json()
        assert set(payload["stats"]["classes"]) <= {
            "incisor",
            "canine",
            "molar1",
            "molar2",
            "molar3",
        }


class TestProjectionEndpoints:
    def test_projection_requires_fit(self, client):
        response = client.get("/api/projection")
        assert response.status_code == 409
        assert response.json()["code"] == "projection_not_fitted"

    def test_projection_marker_kinds(self, client, workspace):
        segment_both(client)
        assert client.post("/api/projection/refit").status_code == 200
        # make one expert-selected sample
        some_gt = next(
            i.id for i in workspace.store.instances.values() if i.source == "ground_truth"
        )
        assert client.post(f"/api/instances/{some_gt}/select", json={"flag": True}).status_code == 200
        payload = client.get("/api/projection").json()
        markers = {p["marker"] for p in payload["points"]}
        assert markers == {"train", "new", "expert"}
        for point in payload["points"]:
            if point["instance_id"] == some_gt:
                assert point["marker"] == "expert"
            elif point["source"] == "ground_truth":
                assert point["marker"] == "train"
            else:
                assert point["marker"] == "new"


class TestEdits:
    def test_label_validation_lists_classes(self, client):
        response = client.post("/api/instances/1/label", json={"class": "premolar"})
        assert response.status_code == 422
        body = response.json()
        assert body["code"] == "unknown_class"
        assert body["details"]["allowed"] == [
            "incisor",
            "canine",
            "molar1",
            "molar2",
            "molar3",
        ]

    def test_contour_move_and_revision(self, client):
        before = client.get("/api/images/1/instances").json()
        inst = before["instances"][0]
        x, y = inst["polygon"][0] + 2.0, inst["polygon"][1] + 2.0
        response = client.post(
            f"/api/instances/{inst['id']}/contour",
            json={"moves": [{"index": 0, "x": x, "y": y}]},
        )
        assert response.status_code == 200
        payload = response.json()
        assert payload["instance"]["polygon"][0] == x
        assert payload["revision"] == before["revision"] + 1

    def test_invalid_contour_rejected(self, client):
        inst = client.get("/api/images/1/instances").json()["instances"][0]
        response = client.post(
            f"/api/instances/{inst['id']}/contour",
            json={"polygon": [0.0, 0.0, 1.0, 0.0]},
        )
        assert response.status_code == 422
        assert response.json()["code"] == "edit_rejected"

    def test_select_model_instance_rejected(self, client):
        created = client.post("/api/images/1/segment").json()["instances"]
        response = client.post(
            f"/api/instances/{created[0]['id']}/select", json={"flag": True}
        )
        assert response.status_code == 422
        assert "model" in response.json()["message"]

    def test_concurrent_edits_on_different_images(self, client):
        a = client.get("/api/images/1/instances").json()["instances"][0]
        b = client.get("/api/images/2/instances").json()["instances"][0]
        revision = client.get("/api/session").json()["revision"]

        def move(inst):
            return client.post(
                f"/api/instances/{inst['id']}/contour",
                json={
                    "moves": [
                        {"index": 0, "x": inst["polygon"][0] + 1, "y": inst["polygon"][1] + 1}
                    ]
                },
            )

        with ThreadPoolExecutor(max_workers=2) as pool:
            results = list(pool.map(move, [a, b]))
        assert all(r.status_code == 200 for r in results)
        after = client.get("/api/session").json()["revision"]
        assert after == revision + 2


class TestTrainingEndpoints:
    def test_empty_submission_422(self, client):
        response = client.post("/api/train", json={"sample_ids": []})
        assert response.status_code == 422

    def test_train_and_history(self, client, workspace):
        gt_ids = [
            i.id for i in workspace.store.instances.values() if i.source == "ground_truth"
        ][:10]
        for instance_id in gt_ids:
            client.post(f"/api/instances/{instance_id}/select", json={"flag": True})
        response = client.post("/api/train", json={"sample_ids": gt_ids})
        assert response.status_code == 200
        body = response.json()["round"]
        assert body["status"] == "done"
        assert body["round"] == 1
        history = client.get("/api/eval/history").json()["history"]
        assert [h["round"] for h in history] == [0, 1]
        assert history[1]["iou"] > history[0]["iou"]
        detail = client.get("/api/train/1").json()["round"]
        assert detail["status"] == "done"

    def test_unknown_round_404(self, client):
        assert client.get("/api/train/9").status_code == 404


class TestRestartConsistency:
    def test_replay_reproduces_get_responses(self, tmp_path):
        config = Config(data_dir=tmp_path / "ws", mock_seed=7)
        ws = Workspace(config)
        ws.ingest_document(generate_dataset_document(seed=7, n_images=1))
        client = TestClient(create_app(ws))
        client.post("/api/images/1/segment")
        inst = client.get("/api/images/1/instances").json()["instances"][0]
        client.post(
            f"/api/instances/{inst['id']}/contour",
            json={"moves": [{"index": 1, "x": 400.0, "y": 200.0}]},
        )
        client.post(f"/api/instances/{inst['id']}/label", json={"class": "canine"})
        ws.save()
        snapshots = [
            client.get("/api/images/1/instances").json()["instances"],
            client.get(f"/api/instances/{inst['id']}/features").json()["vector"],
        ]

        restarted = Workspace(Config(data_dir=tmp_path / "ws", mock_seed=7))
        client2 = TestClient(create_app(restarted))
        assert client2.get("/api/images/1/instances").json()["instances"] == snapshots[0]
        assert (
            client2.get(f"/api/instances/{inst['id']}/features").json()["vector"]
            == snapshots[1]
        )
