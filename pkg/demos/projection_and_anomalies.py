"""Fit the 2-D discriminant projection on a synthetic cohort and hunt the
planted outlier.

Builds five tight clusters of teeth (one per class), displaces one tooth far
off its slot, fits class statistics plus the projection, and prints the
anomaly ranking: the displaced tooth should surface at the top.
"""

import tempfile

from toothlab.config import Config
from toothlab.features import project
from toothlab.synthetic import tooth_polygon  # noqa: F401  (cohort uses it)
from toothlab.workspace import Workspace

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from cohort import PERTURBED_ID, clean_cohort_document  # noqa: E402

with tempfile.TemporaryDirectory() as tmp:
    workspace = Workspace(Config(data_dir=tmp, mock_seed=1))
    workspace.ingest_document(clean_cohort_document(seed=0, perturb_id=PERTURBED_ID))
    print(f"cohort: {len(workspace.store.instances)} teeth, one displaced (id {PERTURBED_ID})")

    model = workspace.refit_projection()
    print("\nclass means in the projected plane:")
    for label, (x, y) in sorted(model.class_means_2d.items()):
        print(f"  {label:>8}: ({x:7.2f}, {y:7.2f})")

    displaced = workspace.store.instances[PERTURBED_ID]
    x, y = project(model, workspace.features_of(displaced))
    print(f"\ndisplaced tooth projects to ({x:.2f}, {y:.2f})")

    print("\nanomaly ranking (z = 3.0), top 5:")
    rows = workspace.anomaly_report(z_threshold=3.0)
    names = ("hu1", "hu2", "hu3", "hu4", "hu5", "hu6", "hu7", "dx", "dy", "angle")
    for row in rows[:5]:
        flagged = [n for n, f in zip(names, row["flags"]) if f != "near"]
        marker = "  <-- the planted outlier" if row["instance_id"] == PERTURBED_ID else ""
        print(
            f"  #{row['instance_id']:>3} {row['tooth_class']:<8} "
            f"deviations={row['anomaly_count']} {flagged}{marker}"
        )

    print("\nsimilarity neighbors of the outlier (projected-plane distance):")
    for neighbor in workspace.similar_to(PERTURBED_ID, 3):
        print(
            f"  #{neighbor['instance_id']:>3} {neighbor['class']:<8} "
            f"distance={neighbor['distance']:.3f}"
        )
