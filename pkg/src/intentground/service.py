"""HTTP facade over the annotation store.

JSON in/out on every route; annotators are identified by a plain id (query
parameter or body field), and image bytes are served from a configured
static root. CORS is open so a separately served frontend can talk to it.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel

from .annotation import (
    AnnotationStore,
    Decision,
    DecisionValidationError,
    ForbiddenError,
    LeaseExpiredError,
)
from .geometry import BBox, InvalidBoxError


class BoxIn(BaseModel):
    box: list[float]
    category: str


class DecisionIn(BaseModel):
    annotator_id: str
    chosen_index: int | None = None
    edited_text: str | None = None
    none_valid: bool = False
    boxes: list[BoxIn] | None = None


def create_app(store: AnnotationStore, images_root: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="intentground annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    root = Path(images_root).resolve() if images_root else None

    @app.get("/tasks/next")
    def next_task(
        annotator: str = Query(...), kind: str | None = Query(default=None)
    ) -> dict:
        try:
            task = store.lease_task(annotator, kind)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "task": task.to_dict() if task else None,
            "lease_seconds": store.lease_seconds,
        }

    @app.post("/tasks/{task_id}/decision")
    def post_decision(task_id: str, body: DecisionIn) -> dict:
        try:
            decision = Decision(
                annotator_id=body.annotator_id,
                chosen_index=body.chosen_index,
                edited_text=body.edited_text,
                none_valid=body.none_valid,
                boxes=(
                    [(BBox.from_sequence(b.box), b.category) for b in body.boxes]
                    if body.boxes is not None
                    else None
                ),
            )
            task = store.submit_decision(task_id, decision)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except LeaseExpiredError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ForbiddenError as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        except (DecisionValidationError, InvalidBoxError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"task": task.to_dict()}

    @app.post("/records/{record_id}/finalize")
    def finalize(record_id: str) -> dict:
        try:
            result = store.finalize(record_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "status": result.status,
            "reason": result.reason,
            "added_boxes": result.added_boxes,
            "record": result.record.to_dict() if result.record else None,
        }

    @app.get("/records/{record_id}")
    def get_record(record_id: str) -> dict:
        try:
            record = store.get_record(record_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"record": record.to_dict(), "provenance": store.provenance.get(record_id)}

    @app.get("/stats")
    def stats() -> dict:
        return store.stats()

    @app.get("/images/{path:path}")
    def image(path: str):
        if root is None:
            raise HTTPException(status_code=404, detail="no images root configured")
        target = (root / path).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            raise HTTPException(status_code=404, detail=f"no image {path!r}")
        return FileResponse(target)

    return app
