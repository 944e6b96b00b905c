"""HTTP JSON service exposing the dataset, features, projection, similarity,
edits, training and evaluation to the UI and to scripts.

All endpoint semantics delegate 1:1 to the owning modules through the
workspace.  Precondition failures map to 4xx with a machine-readable code,
backend trouble to 502, internal faults to 500; every 2xx mutation response
carries the new session revision.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pathlib import Path

from .config import Config
from .features import ProjectionError
from .gateway import (
    InvalidSubmission,
    ProtocolError,
    RoundInProgress,
    TransportError,
)
from .masks import Polygon
from .store import TOOTH_CLASSES, EditRejected
from .workspace import Workspace

__all__ = ["create_app", "serve"]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details: dict | None = None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}


def _image_json(image) -> dict:
    return {
        "id": image.id,
        "file_name": image.file_name,
        "width": image.width,
        "height": image.height,
        "contrast": image.contrast,
    }


def _instance_json(instance) -> dict:
    flat = []
    for x, y in instance.polygon.vertices:
        flat.extend((x, y))
    return {
        "id": instance.id,
        "image_id": instance.image_id,
        "class": instance.tooth_class,
        "polygon": flat,
        "source": instance.source,
        "confidence": instance.confidence,
        "selected": instance.selected_for_training,
        "created_round": instance.created_round,
    }


def create_app(workspace: Workspace) -> FastAPI:
    app = FastAPI(title="toothlab", docs_url=None, redoc_url=None)
    app.state.workspace = workspace

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )

    def get_instance(instance_id: int):
        try:
            return workspace.instance(instance_id)
        except KeyError:
            raise ApiError(404, "unknown_instance", f"no instance {instance_id}")

    def get_image(image_id: int):
        image = workspace.store.images.get(image_id)
        if image is None:
            raise ApiError(404, "unknown_image", f"no image {image_id}")
        return image

    # --- session -----------------------------------------------------------

    @app.get("/api/session")
    def session_view():
        running = workspace.coordinator.running_round
        return {
            "revision": workspace.revision,
            "projection_revision": workspace.projection_revision,
            "running_round": None if running is None else running.number,
        }

    # --- images --------------------------------------------------------------

    @app.get("/api/images")
    def list_images():
        return {
            "revision": workspace.revision,
            "images": [
                _image_json(img)
                for img in sorted(workspace.store.images.values(), key=lambda i: i.id)
            ],
        }

    @app.get("/api/images/{image_id}")
    def image_detail(image_id: int):
        return _image_json(get_image(image_id))

    @app.get("/api/images/{image_id}/instances")
    def image_instances(image_id: int):
        get_image(image_id)
        return {
            "revision": workspace.revision,
            "instances": [
                _instance_json(inst) for inst in workspace.store.instances_of(image_id)
            ],
        }

    @app.post("/api/images/{image_id}/segment")
    def segment_image(image_id: int):
        get_image(image_id)
        try:
            created = workspace.segment_image(image_id)
        except TransportError as exc:
            raise ApiError(502, "backend_unreachable", str(exc), {"retriable": exc.retriable})
        except ProtocolError as exc:
            raise ApiError(502, "backend_protocol", str(exc))
        return {
            "revision": workspace.revision,
            "instances": [_instance_json(inst) for inst in created],
        }

    # --- instances -----------------------------------------------------------

    @app.get("/api/instances/{instance_id}/features")
    def instance_features(instance_id: int):
        instance = get_instance(instance_id)
        try:
            vector = workspace.features_of(instance)
        except ValueError as exc:
            raise ApiError(422, "degenerate_mask", str(exc))
        summary = workspace.deviation_of(instance)
        return {
            "revision": workspace.revision,
            "instance_id": instance_id,
            "class": instance.tooth_class,
            "vector": vector.to_json(),
            "deviation": summary.to_json(),
        }

    @app.get("/api/instances/{instance_id}/similar")
    def instance_similar(instance_id: int, k: int | None = None):
        get_instance(instance_id)
        if k is not None and k < 1:
            raise ApiError(422, "invalid_k", "k must be >= 1")
        try:
            neighbors = workspace.similar_to(instance_id, k)
        except ProjectionError as exc:
            raise ApiError(409, "projection_unavailable", str(exc))
        except ValueError as exc:
            raise ApiError(422, "degenerate_mask", str(exc))
        return {"revision": workspace.revision, "neighbors": neighbors}

    @app.post("/api/instances/{instance_id}/contour")
    def edit_contour(instance_id: int, body: dict):
        get_instance(instance_id)
        moves = body.get("moves")
        polygon = body.get("polygon")
        if not moves and not polygon:
            raise ApiError(422, "empty_edit", "provide moves[] or polygon[]")
        try:
            if polygon is not None:
                pairs = list(zip(polygon[0::2], polygon[1::2]))
                try:
                    new_polygon = Polygon(pairs)
                except ValueError as exc:
                    raise EditRejected(str(exc))
                instance = workspace.edit_replace_polygon(instance_id, new_polygon)
            else:
                for move in moves:
                    instance = workspace.edit_move_vertex(
                        instance_id, int(move["index"]), float(move["x"]), float(move["y"])
                    )
        except EditRejected as exc:
            raise ApiError(422, "edit_rejected", str(exc))
        except (KeyError, TypeError) as exc:
            raise ApiError(422, "malformed_edit", f"bad vertex edit: {exc}")
        return {"revision": workspace.revision, "instance": _instance_json(instance)}

    @app.post("/api/instances/{instance_id}/label")
    def edit_label(instance_id: int, body: dict):
        get_instance(instance_id)
        tooth_class = body.get("class") or body.get("tooth_class")
        if tooth_class not in TOOTH_CLASSES:
            raise ApiError(
                422,
                "unknown_class",
                f"unknown tooth class {tooth_class!r}",
                {"allowed": list(TOOTH_CLASSES)},
            )
        try:
            instance = workspace.edit_set_label(instance_id, tooth_class)
        except EditRejected as exc:
            raise ApiError(422, "edit_rejected", str(exc))
        return {"revision": workspace.revision, "instance": _instance_json(instance)}

    @app.post("/api/instances/{instance_id}/select")
    def edit_select(instance_id: int, body: dict):
        get_instance(instance_id)
        if "flag" not in body:
            raise ApiError(422, "malformed_edit", "body must carry a boolean flag")
        try:
            instance = workspace.edit_set_selected(instance_id, bool(body["flag"]))
        except EditRejected as exc:
            raise ApiError(422, "edit_rejected", str(exc))
        return {"revision": workspace.revision, "instance": _instance_json(instance)}

    # --- projection ------------------------------------------------------------

    @app.get("/api/projection")
    def projection_view():
        if workspace.projection is None:
            raise ApiError(
                409, "projection_not_fitted", "fit the projection first (POST /api/projection/refit)"
            )
        return {
            "revision": workspace.revision,
            "projection_revision": workspace.projection_revision,
            "points": workspace.projection_points(),
            "class_means": {
                str(k): list(v) for k, v in workspace.projection.class_means_2d.items()
            },
        }

    @app.post("/api/projection/refit")
    def projection_refit():
        try:
            workspace.refit_projection()
        except ProjectionError as exc:
            raise ApiError(422, "projection_degenerate", str(exc))
        return {
            "revision": workspace.revision,
            "projection_revision": workspace.projection_revision,
        }

    # --- stats / anomalies ---------------------------------------------------------

    @app.get("/api/classstats")
    def class_stats_view():
        return {"revision": workspace.revision, "stats": workspace.class_stats().to_json()}

    @app.get("/api/anomalies")
    def anomalies_view(z: float | None = None):
        try:
            rows = workspace.anomaly_report(z_threshold=z)
        except ProjectionError as exc:
            raise ApiError(409, "projection_unavailable", str(exc))
        return {"revision": workspace.revision, "anomalies": rows}

    # --- training ----------------------------------------------------------------

    @app.post("/api/train")
    def train(body: dict):
        sample_ids = body.get("sample_ids")
        if not sample_ids:
            raise ApiError(422, "empty_submission", "sample_ids[] must be non-empty")
        try:
            training_round = workspace.train(sample_ids)
        except RoundInProgress as exc:
            raise ApiError(
                409, "round_in_progress", str(exc), {"running_round": exc.running_number}
            )
        except InvalidSubmission as exc:
            raise ApiError(422, "invalid_submission", str(exc))
        except TransportError as exc:
            raise ApiError(502, "backend_unreachable", str(exc), {"retriable": exc.retriable})
        workspace.save()
        return {"revision": workspace.revision, "round": training_round.to_json()}

    @app.get("/api/train/{round_number}")
    def round_view(round_number: int):
        try:
            training_round = workspace.poll_round(round_number)
        except InvalidSubmission as exc:
            raise ApiError(404, "unknown_round", str(exc))
        except TransportError as exc:
            raise ApiError(502, "backend_unreachable", str(exc), {"retriable": exc.retriable})
        return {"revision": workspace.revision, "round": training_round.to_json()}

    @app.get("/api/eval/history")
    def eval_history():
        return {"revision": workspace.revision, "history": workspace.history.to_json()}

    # serve the companion UI when a build is present
    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(config: Config, workspace: Workspace | None = None):
    """Run the service with uvicorn (blocking)."""
    import uvicorn

    workspace = workspace or Workspace(config)
    app = create_app(workspace)
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="warning")
