"""FastAPI application wrapping stage execution and the annotation API."""

from __future__ import annotations

import logging
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles

from .. import __version__
from ..annotation import (
    AnnotationStore,
    MismatchedInputs,
    UnknownPair,
    UnknownSession,
    create_annotation_session,
    list_sessions,
    open_session,
)
from ..corpus import CorpusError
from ..pipeline import MissingUpstream, PipelineError, StaleUpstream, run_stage
from .models import (
    ExportResponse,
    HumanLabel,
    LabelRequest,
    LabelResponse,
    NextPairResponse,
    PairPayload,
    ProgressResponse,
    SessionCreateRequest,
    SessionInfo,
    StageRunRequest,
    StageRunResponse,
)

logger = logging.getLogger(__name__)


def create_app(root: Path, *, ui_dir: Path | None = None) -> FastAPI:
    """Build the service rooted at a stage directory.

    ``root`` is where annotation sessions live and the default home of
    stage artifacts; ``ui_dir`` optionally mounts a built UI bundle at /.
    """
    root = Path(root)
    app = FastAPI(title="dictex", version=__version__)
    stores: dict[str, AnnotationStore] = {}
    stores_lock = threading.Lock()

    def store_for(session_id: str) -> AnnotationStore:
        with stores_lock:
            store = stores.get(session_id)
            if store is None:
                try:
                    store = open_session(root, session_id)
                except UnknownSession:
                    raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
                stores[session_id] = store
            return store

    @app.post("/api/runs/{stage}", response_model=StageRunResponse)
    def run_pipeline_stage(stage: str, request: StageRunRequest) -> StageRunResponse:
        try:
            result = run_stage(request.config, stage, force=request.force)
        except (MissingUpstream, StaleUpstream) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (PipelineError, CorpusError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return StageRunResponse(
            stage=result.stage,
            status="skipped" if result.skipped else "completed",
            artifacts=[str(p) for p in result.artifacts],
            summary=result.summary,
        )

    @app.post("/api/sessions", response_model=SessionInfo)
    def create_session(request: SessionCreateRequest) -> SessionInfo:
        senses_file = request.senses_file or root / "senses.jsonl"
        selections_file = request.selections_file or root / "selections.jsonl"
        if not senses_file.exists() or not selections_file.exists():
            raise HTTPException(status_code=400, detail="senses/selections files not found")
        try:
            store = create_annotation_session(
                senses_file,
                selections_file,
                request.seed,
                root=root,
                sample_size=request.sample_size,
                pair_ids=request.pair_ids,
                session_id=request.session_id,
            )
        except MismatchedInputs as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        with stores_lock:
            stores[store.session_id] = store
        return SessionInfo(session_id=store.session_id, pairs=len(store.pairs))

    @app.get("/api/sessions", response_model=list[SessionInfo])
    def sessions() -> list[SessionInfo]:
        infos = []
        for session_id in list_sessions(root):
            store = store_for(session_id)
            infos.append(SessionInfo(session_id=session_id, pairs=len(store.pairs)))
        return infos

    @app.get("/api/session/{session_id}/next", response_model=NextPairResponse)
    def next_pair(session_id: str, annotator: str) -> NextPairResponse:
        store = store_for(session_id)
        step = store.next_for(annotator)
        if step is None:
            return NextPairResponse(done=True, pair=None)
        index, pair = step
        return NextPairResponse(
            done=False,
            pair=PairPayload(index=index, total=len(store.pairs), **pair.payload()),
        )

    @app.post("/api/session/{session_id}/label", response_model=LabelResponse)
    def submit_label(session_id: str, request: LabelRequest) -> LabelResponse:
        store = store_for(session_id)
        try:
            record, duplicate = store.submit(
                request.pair_id, request.annotator_id, request.choice
            )
        except UnknownPair as exc:
            raise HTTPException(status_code=404, detail=f"unknown pair {exc}")
        return LabelResponse(
            pair_id=record.pair_id,
            annotator_id=record.annotator_id,
            choice=record.choice,
            duplicate=duplicate,
        )

    @app.get("/api/session/{session_id}/progress", response_model=ProgressResponse)
    def progress(session_id: str) -> ProgressResponse:
        store = store_for(session_id)
        return ProgressResponse(total=len(store.pairs), by_annotator=store.progress())

    @app.get("/api/session/{session_id}/export", response_model=ExportResponse)
    def export(session_id: str) -> ExportResponse:
        store = store_for(session_id)
        result = store.consensus()
        return ExportResponse(
            kept=[HumanLabel(pair_id=pid, label=label) for pid, label in result.kept],
            agreement=result.agreement,
            fully_annotated=result.fully_annotated,
            under_annotated=result.under_annotated,
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
        logger.info("serving UI bundle from %s", ui_dir)

    return app
