"""HTTP facade over the pipeline engine.

Long-running stages return 202 with a job id immediately; clients poll
GET /jobs/{id} or stream GET /jobs/{id}/events (server-sent events).
Every state-changing endpoint is idempotent-or-rejecting: repeating an
already-completed stage call returns the stored result, out-of-order
calls return 409 with the current state named, and a concurrent stage on
the same session returns 409 busy.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from typing import Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response, StreamingResponse
from pydantic import BaseModel

from . import __version__
from .config import ServiceConfig, load_config
from .engine import PipelineEngine
from .errors import (
    AnalogyKitError,
    ConfigError,
    GatewayError,
    NotFoundError,
    SessionBusyError,
    StageError,
    ValidationError,
    WrongStateError,
)
from .model import Concept, GenerationJob, PipelineSession, SessionState, state_at_least
from .store import FilesystemStore

SSE_POLL_SECONDS = 0.05


class ConceptBody(BaseModel):
    name: str
    subject: str = "other"
    learner_level: Optional[str] = None


class ChooseBody(BaseModel):
    analogy_id: str


class SceneEditBody(BaseModel):
    description: Optional[str] = None
    image_prompt: Optional[str] = None


def _session_response(session: PipelineSession, status_code: int = 200) -> JSONResponse:
    return JSONResponse(session.to_doc(), status_code=status_code)


def _job_response(job: GenerationJob) -> JSONResponse:
    doc = job.to_doc()
    doc["status_url"] = f"/jobs/{job.id}"
    doc["events_url"] = f"/jobs/{job.id}/events"
    return JSONResponse(doc, status_code=202)


def _stored_result_or_409(
    engine: PipelineEngine, session_id: str, exc: WrongStateError, stage: str
) -> JSONResponse:
    """Map a wrong-state rejection of a completed stage to its stored result."""
    session = engine.get_session(session_id)
    if session.state != SessionState.FAILED:
        if stage == "validate" and session.definition_check is not None:
            return JSONResponse(session.definition_check.to_doc())
        if stage == "analogies" and session.analogies is not None:
            return JSONResponse([a.to_doc() for a in session.analogies])
        if (
            stage == "storyboard"
            and session.storyboard is not None
            and state_at_least(session.state, SessionState.STORYBOARD_READY)
        ):
            return JSONResponse(session.storyboard.to_doc())
        if stage == "video" and session.video is not None:
            return JSONResponse(session.video.to_doc())
    return JSONResponse(
        {"error": "wrong_state", "state": exc.current, "expected": list(exc.expected)},
        status_code=409,
    )


def create_app(
    config: ServiceConfig | None = None,
    engine: PipelineEngine | None = None,
) -> FastAPI:
    config = config or ServiceConfig()
    if engine is None:
        store = FilesystemStore(config.data_root)
        engine = PipelineEngine(
            store, config.build_gateway(), config=config.engine_config()
        )

    app = FastAPI(title="analogykit", version=__version__)
    app.state.engine = engine
    app.state.config = config

    if config.cors_allow_all:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=["*"],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    # -- error mapping -----------------------------------------------------

    @app.exception_handler(NotFoundError)
    async def _not_found(_req: Request, exc: NotFoundError):
        return JSONResponse({"error": "not_found", "detail": str(exc)}, status_code=404)

    @app.exception_handler(SessionBusyError)
    async def _busy(_req: Request, exc: SessionBusyError):
        return JSONResponse(
            {"error": "busy", "detail": str(exc), "running": exc.running_kind},
            status_code=409,
        )

    @app.exception_handler(WrongStateError)
    async def _wrong_state(_req: Request, exc: WrongStateError):
        return JSONResponse(
            {
                "error": "wrong_state",
                "state": exc.current,
                "expected": list(exc.expected),
                "detail": str(exc),
            },
            status_code=409,
        )

    @app.exception_handler(ValidationError)
    async def _invalid(_req: Request, exc: ValidationError):
        return JSONResponse({"error": "validation", "detail": str(exc)}, status_code=422)

    @app.exception_handler(GatewayError)
    async def _backend(_req: Request, exc: GatewayError):
        # Raw backend error bodies stay server-side; only our own message goes out.
        return JSONResponse(
            {"error": "backend_failure", "detail": str(exc)}, status_code=502
        )

    @app.exception_handler(StageError)
    async def _stage(_req: Request, exc: StageError):
        return JSONResponse({"error": "stage_failure", "detail": str(exc)}, status_code=502)

    # -- meta ---------------------------------------------------------------

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "version": __version__,
            "backends": engine.gateway.describe(),
            "mock_only": engine.gateway.all_mock,
        }

    # -- sessions -------------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: ConceptBody):
        concept = Concept(
            name=body.name, subject=body.subject, learner_level=body.learner_level
        )
        return _session_response(engine.create_session(concept), status_code=201)

    @app.get("/sessions")
    def list_sessions(offset: int = 0, limit: int = 50):
        sessions = engine.list_sessions(offset=offset, limit=limit)
        return {
            "sessions": [s.to_doc() for s in sessions],
            "offset": offset,
            "limit": limit,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_response(engine.get_session(session_id))

    @app.post("/sessions/{session_id}/validate")
    def validate(session_id: str):
        try:
            return _job_response(engine.start_validate(session_id))
        except WrongStateError as exc:
            return _stored_result_or_409(engine, session_id, exc, "validate")

    @app.post("/sessions/{session_id}/analogies")
    def analogies(session_id: str):
        try:
            return _job_response(engine.start_analogies(session_id))
        except WrongStateError as exc:
            return _stored_result_or_409(engine, session_id, exc, "analogies")

    @app.post("/sessions/{session_id}/choose")
    def choose(session_id: str, body: ChooseBody):
        return _session_response(engine.choose_analogy(session_id, body.analogy_id))

    @app.post("/sessions/{session_id}/storyboard")
    def storyboard(session_id: str, force: bool = False):
        try:
            return _job_response(engine.start_storyboard(session_id, force=force))
        except WrongStateError as exc:
            return _stored_result_or_409(engine, session_id, exc, "storyboard")

    @app.patch("/sessions/{session_id}/scenes/{index}")
    def edit_scene(session_id: str, index: int, body: SceneEditBody):
        return _session_response(
            engine.edit_scene(
                session_id,
                index,
                new_description=body.description,
                new_image_prompt=body.image_prompt,
            )
        )

    @app.post("/sessions/{session_id}/scenes/{index}/regenerate")
    def regenerate_scene(session_id: str, index: int):
        return _job_response(engine.start_regenerate_scene(session_id, index))

    @app.post("/sessions/{session_id}/video")
    def video(session_id: str, force: bool = False):
        try:
            return _job_response(engine.start_video(session_id, force=force))
        except WrongStateError as exc:
            return _stored_result_or_409(engine, session_id, exc, "video")

    # -- blobs and jobs ---------------------------------------------------------

    @app.get("/blobs/{blob_hash}")
    def get_blob(blob_hash: str):
        data, media_type = engine.store.get_blob_by_hash(blob_hash)
        return Response(content=data, media_type=media_type)

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return JSONResponse(engine.jobs.get(job_id).to_doc())

    @app.get("/jobs/{job_id}/events")
    def job_events(job_id: str):
        engine.jobs.get(job_id)  # 404 before the stream starts

        def stream():
            index = 0
            while True:
                events, done = engine.jobs.events_since(job_id, index)
                for record in events:
                    job = engine.jobs.get(job_id)
                    payload = {
                        "job_id": job_id,
                        "stage_label": record.stage_label,
                        "fraction": record.fraction,
                        "message": record.message,
                        "terminal": record.terminal,
                        "timestamp": record.to_doc()["timestamp"],
                        "status": job.status.value,
                    }
                    yield f"event: progress\ndata: {json.dumps(payload)}\n\n"
                    if record.terminal:
                        return
                index += len(events)
                if done:
                    # terminal event already consumed above when present
                    return
                time.sleep(SSE_POLL_SECONDS)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if config.static_dir is not None and config.static_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


class Service:
    """A running API server that can be stopped programmatically."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread):
        self._server = server
        self._thread = thread

    def stop(self, timeout: float = 5.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout)


def serve(config: ServiceConfig, wait: bool = True) -> Service:
    """Start the HTTP service; raises ConfigError when the port is taken."""
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((config.host, config.port))
    except OSError as exc:
        raise ConfigError("port", f"cannot bind {config.host}:{config.port}: {exc}") from exc
    finally:
        probe.close()

    app = create_app(config)
    server = uvicorn.Server(
        uvicorn.Config(app, host=config.host, port=config.port, log_level="warning")
    )
    thread = threading.Thread(target=server.run, name="analogykit-api", daemon=True)
    thread.start()
    deadline = time.time() + 10
    while wait and not server.started and time.time() < deadline:
        if not thread.is_alive():
            raise AnalogyKitError("API server exited during startup")
        time.sleep(0.02)
    return Service(server, thread)


def main() -> None:  # pragma: no cover - thin convenience runner
    import sys

    config = load_config(sys.argv[1] if len(sys.argv) > 1 else None)
    service = serve(config)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        service.stop()


if __name__ == "__main__":  # pragma: no cover
    main()
