"""HTTP service exposing the loop to operators and the dashboard.

All mutations funnel through one lock around the control loop (the
single-writer actor); reads take brief snapshots under the same lock so
they never observe a half-applied transition.  Every mutating endpoint
produces exactly one audit event via the loop.

Auth is two static bearer roles from config: operator (sessions, ratings,
reads) and admin (veto, revert).  Empty configured tokens disable the
check, which is for local development only.
"""

from __future__ import annotations

import logging
import threading
import time
from pathlib import Path
from typing import Callable, Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .backbone import build_backbone
from .config import ForgeConfig
from .errors import (
    BackboneUnavailable,
    CandidateInFlight,
    ForgeError,
    InvalidRating,
    InvariantViolation,
    NotAccepted,
    UnknownRef,
    VetoWindowClosed,
)
from .loop import ControlLoop, replay_events
from .persistence import AuditLog, CommitStore, FileAuditLog, FileCommitStore
from .reflection import LLMEngineConfig, LLMReflectionEngine, MockReflectionEngine
from .stats import BACKEND_NAME
from .tools import LocalProcessRunner, StubRunner

logger = logging.getLogger(__name__)

Clock = Callable[[], float]


class SessionRequest(BaseModel):
    input: str
    ephemeral_context: Optional[str] = None


class RatingRequest(BaseModel):
    rating: int = Field(ge=1, le=5)
    submitted_by: Optional[str] = None


def build_loop(config: ForgeConfig) -> ControlLoop:
    """Construct the loop from config, resuming from the audit log when the
    storage root already holds events (event-sourced restart)."""
    if config.reflection.kind == "mock":
        engine = MockReflectionEngine()
    else:
        engine = LLMReflectionEngine(LLMEngineConfig(
            endpoint=config.reflection.endpoint,
            timeout_s=config.reflection.timeout_s,
            retries=config.reflection.retries,
            max_response_bytes=config.reflection.max_response_bytes,
            token_env=config.reflection.token_env or "ILWS_REFLECTION_TOKEN",
        ))
    backbone = build_backbone(config.backbone)
    runner = LocalProcessRunner() if config.sandbox_root is not None else StubRunner()
    if config.storage_root is not None:
        root = Path(config.storage_root)
        store: CommitStore = FileCommitStore(root)
        audit: AuditLog = FileAuditLog(root / "audit", fsync=config.audit_fsync)
        prior = audit.read()
        if prior:
            logger.info("resuming from %d audit events", len(prior))
            return replay_events(
                prior, config, engine, backbone,
                tool_runner=runner, store=store, audit=audit,
            )
        return ControlLoop(config, store, audit, engine, backbone, tool_runner=runner)
    return ControlLoop(config, CommitStore(), AuditLog(), engine, backbone, tool_runner=runner)


def create_app(config: ForgeConfig, loop: Optional[ControlLoop] = None,
               clock: Optional[Clock] = None) -> FastAPI:
    app = FastAPI(title="ilws-forge", version=__version__)
    app.state.loop = loop if loop is not None else build_loop(config)
    app.state.lock = threading.RLock()
    app.state.clock = clock if clock is not None else time.time
    app.state.config = config

    def now() -> float:
        return app.state.clock()

    def require_role(request: Request, role: str) -> None:
        op_tok, ad_tok = config.auth.operator_token, config.auth.admin_token
        if not op_tok and not ad_tok:
            return  # auth disabled (local development)
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        token = header.removeprefix("Bearer ")
        valid = {t for t in (op_tok, ad_tok) if t}
        if token not in valid:
            raise HTTPException(status_code=401, detail="invalid token")
        if role == "admin" and token != ad_tok:
            raise HTTPException(status_code=403, detail="admin role required")

    def operator(request: Request) -> None:
        require_role(request, "operator")

    def admin(request: Request) -> None:
        require_role(request, "admin")

    @app.exception_handler(ForgeError)
    async def forge_error_handler(request: Request, exc: ForgeError):
        status = 500
        if isinstance(exc, (VetoWindowClosed, NotAccepted, CandidateInFlight)):
            status = 409
        elif isinstance(exc, (InvalidRating, InvariantViolation)):
            status = 422
        elif isinstance(exc, UnknownRef):
            status = 404
        elif isinstance(exc, BackboneUnavailable):
            status = 503
        return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})

    # -- session path ---------------------------------------------------

    @app.post("/v1/sessions", dependencies=[Depends(operator)])
    def create_session(body: SessionRequest):
        if not body.input.strip():
            raise HTTPException(status_code=422, detail="input must be non-empty")
        with app.state.lock:
            session = app.state.loop.create_session(
                body.input, at=now(), ephemeral_context=body.ephemeral_context
            )
            return {
                "session_id": session.id,
                "output": session.output,
                "state_commit": session.state_commit,
            }

    @app.post("/v1/sessions/{session_id}/rating", dependencies=[Depends(operator)])
    def rate_session(session_id: str, body: RatingRequest):
        with app.state.lock:
            try:
                progress = app.state.loop.rate_session(
                    session_id, body.rating, at=now(), submitted_by=body.submitted_by
                )
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
            except InvariantViolation as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            return progress

    # -- read-side -------------------------------------------------------

    @app.get("/v1/state", dependencies=[Depends(operator)])
    def get_state():
        with app.state.lock:
            return app.state.loop.state_payload()

    @app.get("/v1/candidates", dependencies=[Depends(operator)])
    def get_candidates():
        with app.state.lock:
            return app.state.loop.candidates_payload(now())

    @app.get("/v1/gate/decisions", dependencies=[Depends(operator)])
    def get_decisions():
        with app.state.lock:
            return {"decisions": app.state.loop.decisions_payload()}

    @app.get("/v1/diff/{a}/{b}", dependencies=[Depends(operator)])
    def get_diff(a: str, b: str):
        with app.state.lock:
            return app.state.loop.diff_payload(a, b)

    @app.get("/v1/metrics", dependencies=[Depends(operator)])
    def get_metrics():
        with app.state.lock:
            payload = app.state.loop.metrics_payload(now())
            payload["backend"] = BACKEND_NAME
            return payload

    @app.get("/v1/audit", dependencies=[Depends(operator)])
    def get_audit(start: int = 0, end: Optional[int] = None):
        with app.state.lock:
            return {"events": [e.as_dict() for e in app.state.loop.audit.read(start, end)]}

    # -- governance -------------------------------------------------------

    @app.post("/v1/candidates/{candidate_id}/veto", dependencies=[Depends(admin)])
    def veto(candidate_id: str):
        with app.state.lock:
            try:
                return app.state.loop.veto(candidate_id, at=now())
            except KeyError:
                raise HTTPException(status_code=404, detail=f"unknown candidate {candidate_id}")

    @app.post("/v1/revert/{ref}", dependencies=[Depends(admin)])
    def revert(ref: str):
        with app.state.lock:
            return app.state.loop.manual_revert(ref, at=now())

    return app


def run_server(config: ForgeConfig, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level="info")
