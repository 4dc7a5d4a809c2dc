"""REST surface for the human review loop.

Routes:
    POST /sessions                    body: review sample reference or inline ids
    GET  /sessions/{id}/batch?n=      next pending items with review context
    POST /sessions/{id}/verdicts      one verdict; returns running stats
    GET  /sessions/{id}/stats         running stats
    GET  /items/{id}/image            image bytes for the item's record
"""

from __future__ import annotations

import mimetypes
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, model_validator

from ..dataset_io import ReviewSample, load_review_sample
from .store import (
    AlreadyReviewed,
    Decision,
    ItemKind,
    ReviewStore,
    ReviewVerdict,
    SessionClosed,
    UnknownItems,
    UnknownSession,
)


class SessionRequest(BaseModel):
    review_sample_path: Optional[str] = None
    item_ids: Optional[list[str]] = None
    population_size: Optional[int] = None
    confidence: float = 0.95
    margin: float = 0.04
    assumed_proportion: float = 0.5
    seed: int = 0

    @model_validator(mode="after")
    def _one_source(self) -> "SessionRequest":
        if (self.review_sample_path is None) == (self.item_ids is None):
            raise ValueError("provide exactly one of review_sample_path or item_ids")
        return self


class VerdictRequest(BaseModel):
    item_id: str
    item_kind: str
    decision: str
    reviewer_id: str
    edited_text: Optional[str] = None

    @model_validator(mode="after")
    def _edit_text(self) -> "VerdictRequest":
        if (self.decision == "edit") != (self.edited_text is not None):
            raise ValueError("edited_text is required iff decision is edit")
        return self


def create_app(store: ReviewStore, static_dir: Optional[Path] = None) -> FastAPI:
    """API routes for the review loop; optionally also serves the built
    browser UI (static_dir -> frontend/dist) at the root path."""
    app = FastAPI(title="review-service")

    @app.post("/sessions")
    def create_session(req: SessionRequest) -> dict:
        if req.review_sample_path:
            sample = load_review_sample(Path(req.review_sample_path))
        else:
            ids = req.item_ids or []
            sample = ReviewSample(
                population_size=req.population_size or len(ids),
                confidence=req.confidence, margin=req.margin,
                assumed_proportion=req.assumed_proportion,
                sample_size=len(ids), item_ids=tuple(ids), seed=req.seed)
        try:
            session_id = store.start_session(sample)
        except UnknownItems as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"session_id": session_id, "items": sample.sample_size}

    @app.get("/sessions/{session_id}/batch")
    def batch(session_id: str, n: int = 10) -> dict:
        try:
            items = store.get_batch(session_id, n)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except SessionClosed as exc:
            raise HTTPException(status_code=410, detail=str(exc)) from exc
        return {"items": items, "pending": len(store.pending_items(session_id))}

    @app.post("/sessions/{session_id}/verdicts")
    def post_verdict(session_id: str, req: VerdictRequest) -> dict:
        try:
            verdict = ReviewVerdict(
                item_id=req.item_id, item_kind=ItemKind(req.item_kind),
                decision=Decision(req.decision), reviewer_id=req.reviewer_id,
                edited_text=req.edited_text)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            stats = store.post_verdict(session_id, verdict)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except UnknownItems as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except AlreadyReviewed as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except SessionClosed as exc:
            raise HTTPException(status_code=410, detail=str(exc)) from exc
        return stats.to_dict()

    @app.get("/sessions/{session_id}/stats")
    def stats(session_id: str) -> dict:
        try:
            return store.stats(session_id).to_dict()
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/items/{item_id}/image")
    def item_image(item_id: str) -> FileResponse:
        try:
            context = store.item_context(item_id)
        except UnknownItems as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        path = Path(context["image_path"])
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"image file missing: {path}")
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media_type)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
