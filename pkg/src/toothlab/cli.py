"""Batch driver for headless use.

Subcommands: ingest, segment, features, fit-projection, anomalies, eval,
export, select, edit, train, serve.  Exit status is 0 on success, 1 on a
validation failure (bad flags, malformed files, rejected edits) and 2 on
I/O or backend-transport failure.  All file outputs are byte-reproducible
for the same inputs, seed and data directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import Config, load_config
from .gateway import ProtocolError, RoundInProgress, TransportError
from .store import ParseError, load_annotation_document
from .workspace import Workspace, evaluate_documents

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toothlab",
        description="Audit, correct and retrain tooth segmentations in batch.",
    )
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--data-dir", type=Path, default=None, help="workspace directory")
    parser.add_argument("--seed", type=int, default=None, help="mock backend seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a COCO-style annotation file")
    p.add_argument("file", type=Path)

    p = sub.add_parser("segment", help="request segmentation for stored images")
    p.add_argument("--backend", default=None, help="mock or a backend base URL")
    p.add_argument("--image", type=int, action="append", default=None, help="image id (repeatable)")

    p = sub.add_parser("features", help="metric vectors for every instance")
    p.add_argument("--out", type=Path, default=None, help="write CSV here instead of stdout")

    sub.add_parser("fit-projection", help="fit the 2-D discriminant projection")

    p = sub.add_parser("anomalies", help="rank instances by deviation flags")
    p.add_argument("--z", type=float, default=None, help="band width in standard deviations")
    p.add_argument("--out", type=Path, default=None, help="write the report (JSON) here")

    p = sub.add_parser("eval", help="pixel metrics of one annotation file against another")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="write the report (JSON) here")

    p = sub.add_parser("export", help="write annotations passing a filter")
    p.add_argument("--filter", default="all", help="all|selected|ground_truth|model|corrected|labeled")
    p.add_argument("--out", type=Path, default=None, help="output file (default stdout)")

    p = sub.add_parser("select", help="flag instances for the next training round")
    p.add_argument("--ids", default=None, help="comma-separated instance ids")
    p.add_argument("--first", type=int, default=None, help="take the N lowest ids matching --filter")
    p.add_argument("--filter", default="labeled", help="candidate pool for --first")
    p.add_argument("--clear", action="store_true", help="unselect instead of select")

    p = sub.add_parser("edit", help="apply scripted edits from an NDJSON file")
    p.add_argument("script", type=Path)

    sub.add_parser("train", help="feed the selected samples back as one round")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=None)

    return parser


def _build_config(args) -> Config:
    config = load_config(args.config)
    if args.data_dir is not None:
        config.data_dir = args.data_dir
    if args.seed is not None:
        config.mock_seed = args.seed
    backend = getattr(args, "backend", None)
    if backend:
        config.backend = backend
    port = getattr(args, "port", None)
    if port:
        config.port = port
    return config


def _emit(path: Path | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def cmd_ingest(ws: Workspace, args) -> int:
    document = load_annotation_document(args.file)
    report = ws.ingest_document(document)
    ws.save()
    print(f"ingested {report.images_added} images, {report.instances_added} instances")
    if report.skipped:
        for ref, reason in report.skipped:
            print(f"  skipped {ref}: {reason}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_segment(ws: Workspace, args) -> int:
    image_ids = args.image
    if not image_ids:
        with_model = {
            inst.image_id for inst in ws.store.instances.values() if inst.source == "model"
        }
        image_ids = [i for i in sorted(ws.store.images) if i not in with_model]
    total = 0
    for image_id in image_ids:
        if image_id not in ws.store.images:
            print(f"unknown image id {image_id}", file=sys.stderr)
            return EXIT_VALIDATION
        created = ws.segment_image(image_id)
        total += len(created)
        print(f"image {image_id}: {len(created)} predictions")
    ws.save()
    print(f"stored {total} model instances")
    return EXIT_OK


def cmd_features(ws: Workspace, args) -> int:
    _emit(args.out, ws.features_csv())
    return EXIT_OK


def cmd_fit_projection(ws: Workspace, args) -> int:
    model = ws.refit_projection()
    print(f"projection fitted over {len(model.class_means_2d)} classes")
    return EXIT_OK


def cmd_anomalies(ws: Workspace, args) -> int:
    rows = ws.anomaly_report(z_threshold=args.z)
    if args.out is not None:
        _emit(args.out, _dump_json(rows))
    else:
        for row in rows[:20]:
            flags = ",".join(
                name for name, f in zip(
                    ("hu1", "hu2", "hu3", "hu4", "hu5", "hu6", "hu7", "dx", "dy", "angle"),
                    row["flags"],
                )
                if f != "near"
            )
            print(
                f"#{row['instance_id']:>5} {row['tooth_class']:<8} "
                f"deviations={row['anomaly_count']} [{flags}]"
            )
    return EXIT_OK


def cmd_eval(ws: Workspace, args) -> int:
    pred = load_annotation_document(args.pred)
    gt = load_annotation_document(args.gt)
    report = evaluate_documents(pred, gt)
    payload = report.to_json()
    _emit(args.out, _dump_json(payload))
    if args.out is not None:
        print(
            f"iou={report.iou:.2f} precision={report.precision:.2f} "
            f"recall={report.recall:.2f} f1={report.f1:.2f}"
        )
    return EXIT_OK


def cmd_export(ws: Workspace, args) -> int:
    document = ws.store.export(args.filter)
    _emit(args.out, _dump_json(document))
    return EXIT_OK


def cmd_select(ws: Workspace, args) -> int:
    if args.ids:
        ids = [int(part) for part in args.ids.split(",") if part.strip()]
    elif args.first:
        pool = [
            inst.id
            for inst in sorted(ws.store.instances.values(), key=lambda i: i.id)
            if inst.selected_for_training != (not args.clear)
        ]
        candidates = ws.store.export(args.filter)["annotations"]
        allowed = {ann["id"] for ann in candidates}
        ids = [i for i in pool if i in allowed][: args.first]
    else:
        print("select needs --ids or --first", file=sys.stderr)
        return EXIT_VALIDATION
    for instance_id in ids:
        ws.edit_set_selected(instance_id, not args.clear, actor="cli")
    ws.save()
    print(f"{'unselected' if args.clear else 'selected'} {len(ids)} instances")
    return EXIT_OK


def cmd_edit(ws: Workspace, args) -> int:
    applied = 0
    with open(args.script) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.script}:{lineno}: {exc.msg}") from exc
            record = ws.store.new_edit(
                instance_id=int(data["instance_id"]),
                kind=str(data["kind"]),
                payload=dict(data["payload"]),
                actor=str(data.get("actor", "script")),
                timestamp=float(data.get("timestamp", 0.0)),
            )
            ws.store.apply_edit(record)
            applied += 1
    ws.bump_revision()
    ws.save()
    print(f"applied {applied} edits")
    return EXIT_OK


def cmd_train(ws: Workspace, args) -> int:
    ids = sorted(
        inst.id for inst in ws.store.instances.values() if inst.selected_for_training
    )
    training_round = ws.train(ids)
    ws.save()
    metrics = training_round.metrics
    if metrics is None:
        print(f"round {training_round.number}: {training_round.status}")
    else:
        print(
            f"round {training_round.number}: {training_round.status} "
            f"iou={metrics.iou:.2f} f1={metrics.f1:.2f}"
        )
    return EXIT_OK


def cmd_serve(ws: Workspace, args) -> int:
    from .service import serve

    serve(ws.config, workspace=ws)
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "segment": cmd_segment,
    "features": cmd_features,
    "fit-projection": cmd_fit_projection,
    "anomalies": cmd_anomalies,
    "eval": cmd_eval,
    "export": cmd_export,
    "select": cmd_select,
    "edit": cmd_edit,
    "train": cmd_train,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_config(args)
        workspace = Workspace(config)
        return _COMMANDS[args.command](workspace, args)
    except (TransportError, ProtocolError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RoundInProgress,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError) as exc:
        # covers parse errors, rejected edits and bad submissions
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
