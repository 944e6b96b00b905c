"""The whole feedback loop against the deterministic mock backend.

Ingest synthetic ground truth, segment every radiograph, correct a few model
outputs, select the training pool, run three feedback rounds, and print the
evaluation history: the mock learning curve climbs monotonically.
"""

import tempfile

from toothlab.config import Config
from toothlab.synthetic import generate_dataset_document
from toothlab.workspace import Workspace

with tempfile.TemporaryDirectory() as tmp:
    workspace = Workspace(Config(data_dir=tmp, mock_seed=42))

    print("== ingest ==")
    report = workspace.ingest_document(generate_dataset_document(seed=42, n_images=4))
    print(f"{report.images_added} radiographs, {report.instances_added} ground-truth teeth")

    print("\n== segment (mock backend, seed 42) ==")
    for image_id in sorted(workspace.store.images):
        created = workspace.segment_image(image_id)
        low = sum(1 for inst in created if inst.confidence < 0.5)
        print(f"image {image_id}: {len(created)} predictions ({low} low-confidence)")

    print("\n== expert corrections ==")
    model_instances = [
        inst for inst in workspace.store.instances.values() if inst.source == "model"
    ]
    for inst in model_instances[:20]:
        x, y = inst.polygon.vertices[0]
        workspace.edit_move_vertex(inst.id, 0, x + 1.5, y + 1.0)
    corrected = sum(
        1 for inst in workspace.store.instances.values() if inst.source == "corrected"
    )
    print(f"corrected instances after vertex edits: {corrected}")

    print("\n== select 100 samples and train three rounds ==")
    labeled = [
        inst.id
        for inst in sorted(workspace.store.instances.values(), key=lambda i: i.id)
        if inst.source in ("ground_truth", "corrected")
    ][:100]
    for instance_id in labeled:
        workspace.edit_set_selected(instance_id, True)
    for _ in range(3):
        done = workspace.train(labeled)
        print(f"round {done.number}: iou={done.metrics.iou:.2f} f1={done.metrics.f1:.2f}")

    print("\n== evaluation history ==")
    for entry in workspace.history.series():
        bar = "#" * int((entry.iou - 70) * 2)
        print(f"round {entry.round_number}: {entry.iou:6.2f} {bar}")
