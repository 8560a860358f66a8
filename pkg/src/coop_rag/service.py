"""HTTP API: chat, ingestion, feedback, metrics, health.

All endpoints speak JSON under /v1. Every 4xx/5xx response carries the
envelope ``{"error": {"code": ..., "message": ...}}`` with codes from a
closed set (see ERROR_CODES). Usage is logged to append-only JSONL files
(queries.jsonl, feedback.jsonl) under the data directory; the metrics
endpoint derives its counters from the same records, so restarts resume
counts consistently.

Ingestion builds a complete replacement index and swaps it in atomically;
requests already running keep scoring against the old snapshot.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .config import ServiceConfig
from .errors import (
    BackendError,
    CoopRagError,
    EmptyIndexError,
    InputError,
    MalformedRecordError,
    PersistenceError,
    UnknownSessionError,
)
from .embedding import make_embedder
from .index import KnowledgeIndex, load_index, save_index
from .ingest import build_index_from_corpus
from .lexicon import load_lexicon
from .orchestrator import (
    ChatDeps,
    SessionStore,
    handle_chat,
    make_generation_backend,
)
from .query import RemoteVisionBackend, StubVisionBackend

logger = logging.getLogger(__name__)

ACCURACY_STEPS = (0, 25, 50, 75, 100)

ERROR_CODES = (
    "input_required",
    "malformed_request",
    "unknown_session",
    "unknown_turn",
    "invalid_accuracy",
    "payload_too_large",
    "backend_failure",
    "index_not_loaded",
    "ingest_disabled",
    "invalid_corpus",
    "unauthorized",
    "internal_error",
)


class ApiError(Exception):
    def __init__(self, status_code: int, code: str, message: str):
        assert code in ERROR_CODES, code
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message


class ChatRequest(BaseModel):
    session_id: str | None = None
    message: str = ""
    image_base64: str | None = None
    style: str | None = None


class IngestRequest(BaseModel):
    corpus_path: str
    format: str = "jsonl"


class FeedbackRequest(BaseModel):
    session_id: str
    turn_index: int
    accuracy_pct: int
    comment: str | None = None


@dataclass
class BackendStatus:
    """Last-known liveness per backend; never probed on the health path."""

    embedding: str = "stub"
    generation: str = "stub"
    vision: str = "stub"

    def mark(self, backend: str, up: bool) -> None:
        if getattr(self, backend, "stub") != "stub":
            setattr(self, backend, "up" if up else "down")


@dataclass
class ServiceState:
    config: ServiceConfig
    index: KnowledgeIndex | None
    deps_template: ChatDeps
    statuses: BackendStatus
    queries_log: Path
    feedback_log: Path
    query_records: list[dict] = field(default_factory=list)
    feedback_records: list[dict] = field(default_factory=list)
    log_lock: threading.Lock = field(default_factory=threading.Lock)
    ingest_lock: threading.Lock = field(default_factory=threading.Lock)


def _replay_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _append_jsonl(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        fh.flush()


def build_state(config: ServiceConfig, transport=None) -> ServiceState:
    """Wire backends, session store, logs, and the persisted index."""
    data_dir = Path(config.data_dir)
    lexicon = load_lexicon(config.lexicon_path)
    embedder = make_embedder(config.embedder, transport=transport)
    generation = make_generation_backend(config.generation, transport=transport)
    if config.vision.kind == "stub":
        vision = StubVisionBackend()
    else:
        vision = RemoteVisionBackend(
            base_url=config.vision.base_url,
            auth_env_var=config.vision.auth_env_var,
            timeout_ms=config.vision.timeout_ms,
            transport=transport,
        )
    statuses = BackendStatus(
        embedding="stub" if config.embedder.kind == "deterministic_hash" else "down",
        generation="stub" if config.generation.kind == "extractive_stub" else "down",
        vision="stub" if config.vision.kind == "stub" else "down",
    )
    index: KnowledgeIndex | None = None
    index_path = config.resolved_index_path
    if (index_path / "manifest.json").exists():
        index = load_index(index_path, expected_dims=config.embedder.dims)
    session_store = SessionStore(data_dir / "sessions.jsonl")
    deps = ChatDeps(
        index=index,  # swapped per request from state
        lexicon=lexicon,
        embedder=embedder,
        generation_backend=generation,
        session_store=session_store,
        retrieval_cfg=config.retrieval,
        vision_backend=vision,
        ood_threshold=config.ood_threshold,
        clarification_message=config.clarification_message,
        history_window=config.history_window,
    )
    queries_log = data_dir / "queries.jsonl"
    feedback_log = data_dir / "feedback.jsonl"
    return ServiceState(
        config=config,
        index=index,
        deps_template=deps,
        statuses=statuses,
        queries_log=queries_log,
        feedback_log=feedback_log,
        query_records=_replay_jsonl(queries_log),
        feedback_records=_replay_jsonl(feedback_log),
    )


def create_app(
    config: ServiceConfig | None = None,
    state: ServiceState | None = None,
    transport=None,
) -> FastAPI:
    config = config or ServiceConfig()
    state = state or build_state(config, transport=transport)
    app = FastAPI(title="coop-rag", version=__version__)
    app.state.service = state

    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={
                "error": {"code": "malformed_request", "message": str(exc.errors())}
            },
        )

    @app.exception_handler(Exception)
    async def on_unexpected(request: Request, exc: Exception):
        logger.exception("unhandled error")
        return JSONResponse(
            status_code=500,
            content={"error": {"code": "internal_error", "message": str(exc)}},
        )

    def require_auth(request: Request) -> None:
        env_name = config.auth_token_env
        if not env_name:
            return
        import os

        token = os.environ.get(env_name, "")
        if not token:
            return
        supplied = request.headers.get("Authorization", "")
        if supplied != f"Bearer {token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    def enforce_size(request: Request) -> None:
        length = request.headers.get("content-length")
        if length and int(length) > config.limits.max_request_bytes:
            raise ApiError(
                413,
                "payload_too_large",
                f"request exceeds {config.limits.max_request_bytes} bytes",
            )

    @app.post("/v1/chat")
    async def chat(body: ChatRequest, request: Request):
        require_auth(request)
        enforce_size(request)
        if not body.message.strip() and not body.image_base64:
            raise ApiError(400, "input_required", "message or image required")
        if body.style is not None and body.style not in ("concise", "detailed"):
            raise ApiError(
                400, "malformed_request", f"unknown style: {body.style!r}"
            )
        image: bytes | None = None
        if body.image_base64:
            if len(body.image_base64) > config.limits.max_image_base64_bytes:
                raise ApiError(
                    413,
                    "payload_too_large",
                    "image exceeds the configured base64 size limit",
                )
            try:
                image = base64.b64decode(body.image_base64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise ApiError(
                    400, "malformed_request", f"invalid base64 image: {exc}"
                )
        if state.index is None or len(state.index) == 0:
            raise ApiError(503, "index_not_loaded", "no knowledge index loaded")

        deps = _deps_with_index(state)
        try:
            outcome = handle_chat(
                body.session_id, body.message, image, deps, style=body.style
            )
        except UnknownSessionError as exc:
            raise ApiError(404, "unknown_session", str(exc))
        except EmptyIndexError as exc:
            raise ApiError(503, "index_not_loaded", str(exc))
        except BackendError as exc:
            state.statuses.mark(exc.backend or "generation", up=False)
            raise ApiError(502, "backend_failure", str(exc))
        except InputError as exc:
            raise ApiError(400, "input_required", str(exc))
        _mark_used_backends(state, outcome)
        _log_query(state, outcome)
        answer = outcome.answer
        contexts = []
        if outcome.retrieval is not None:
            for chunk, candidate in outcome.retrieval.contexts:
                contexts.append(
                    {
                        "chunk_id": chunk.chunk_id,
                        "source": chunk.metadata.source or "unknown",
                        "score": candidate.fused,
                        "semantic_sim": candidate.semantic_sim,
                        "text": chunk.text,
                    }
                )
        return {
            "session_id": outcome.session_id,
            "answer": answer.text,
            "citations": [
                {"source": source, "title": title}
                for source, title in answer.citations
            ],
            "contexts": contexts,
            "ood": answer.ood,
            "latency_ms": answer.latency_ms,
            "style": answer.style,
            "warnings": outcome.prepared.warnings if outcome.prepared else [],
        }

    @app.post("/v1/ingest")
    async def ingest(request: Request, corpus: UploadFile | None = None):
        require_auth(request)
        enforce_size(request)
        if not config.ingest_enabled:
            raise ApiError(403, "ingest_disabled", "ingestion is disabled by config")
        corpus_format = "jsonl"
        if corpus is not None:
            upload_dir = Path(config.data_dir) / "uploads"
            upload_dir.mkdir(parents=True, exist_ok=True)
            corpus_path = upload_dir / (corpus.filename or "corpus.jsonl")
            corpus_path.write_bytes(await corpus.read())
        else:
            try:
                body = IngestRequest.model_validate(await request.json())
            except Exception as exc:
                raise ApiError(
                    400, "malformed_request", f"invalid ingest request: {exc}"
                )
            corpus_path = Path(body.corpus_path)
            corpus_format = body.format
        with state.ingest_lock:
            try:
                index, documents, chunks = build_index_from_corpus(
                    corpus_path,
                    corpus_format=corpus_format,
                    chunk_cfg=config.chunking,
                    embedder_spec=config.embedder,
                    embedder=state.deps_template.embedder,
                )
            except FileNotFoundError as exc:
                raise ApiError(422, "invalid_corpus", str(exc))
            except (MalformedRecordError, InputError) as exc:
                raise ApiError(422, "invalid_corpus", str(exc))
            except BackendError as exc:
                state.statuses.mark("embedding", up=False)
                raise ApiError(502, "backend_failure", str(exc))
            save_index(index, config.resolved_index_path)
            state.index = index  # atomic swap; in-flight reads keep the old one
        return {"documents": documents, "chunks": chunks}

    @app.post("/v1/feedback")
    async def feedback(body: FeedbackRequest, request: Request):
        require_auth(request)
        if body.accuracy_pct not in ACCURACY_STEPS:
            raise ApiError(
                400,
                "invalid_accuracy",
                f"accuracy_pct must be one of {list(ACCURACY_STEPS)}",
            )
        store = state.deps_template.session_store
        try:
            session = store.get(body.session_id)
        except UnknownSessionError as exc:
            raise ApiError(404, "unknown_session", str(exc))
        if not 0 <= body.turn_index < len(session.turns):
            raise ApiError(
                404,
                "unknown_turn",
                f"session has {len(session.turns)} turns, "
                f"no turn {body.turn_index}",
            )
        record = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "session_id": body.session_id,
            "turn_index": body.turn_index,
            "accuracy_pct": body.accuracy_pct,
            "comment": body.comment,
        }
        with state.log_lock:
            state.feedback_records.append(record)
            _append_jsonl(state.feedback_log, record)
        return {"accepted": True}

    @app.get("/v1/metrics")
    async def metrics(request: Request):
        require_auth(request)
        with state.log_lock:
            queries = list(state.query_records)
            feedback_records = list(state.feedback_records)
        histogram = {step: 0 for step in ACCURACY_STEPS}
        for record in feedback_records:
            histogram[record["accuracy_pct"]] += 1
        latencies = [q["latency_ms"] for q in queries]
        contexts = [q["contexts_count"] for q in queries]
        daily: dict[str, dict] = {}
        for q in queries:
            day = q["timestamp"][:10]
            slot = daily.setdefault(day, {"queries": 0, "accuracy": []})
            slot["queries"] += 1
        for record in feedback_records:
            day = record["timestamp"][:10]
            slot = daily.setdefault(day, {"queries": 0, "accuracy": []})
            slot["accuracy"].append(record["accuracy_pct"])
        daily_counts = [
            {
                "date": day,
                "queries": slot["queries"],
                "mean_accuracy_pct": (
                    sum(slot["accuracy"]) / len(slot["accuracy"])
                    if slot["accuracy"]
                    else None
                ),
            }
            for day, slot in sorted(daily.items())
        ]
        return {
            "queries_total": len(queries),
            "ood_total": sum(1 for q in queries if q["ood"]),
            "mean_latency_ms": (
                sum(latencies) / len(latencies) if latencies else 0.0
            ),
            "mean_contexts": (
                sum(contexts) / len(contexts) if contexts else 0.0
            ),
            "feedback_histogram": {str(k): v for k, v in histogram.items()},
            "daily_counts": daily_counts,
        }

    @app.get("/v1/health")
    async def health():
        return {
            "status": "ok",
            "index_chunks": len(state.index) if state.index is not None else 0,
            "backends": {
                "embedding": state.statuses.embedding,
                "generation": state.statuses.generation,
                "vision": state.statuses.vision,
            },
        }

    return app


def _deps_with_index(state: ServiceState) -> ChatDeps:
    from dataclasses import replace

    return replace(state.deps_template, index=state.index)


def _mark_used_backends(state: ServiceState, outcome) -> None:
    state.statuses.mark("generation", up=True)
    state.statuses.mark("embedding", up=True)
    if outcome.prepared is not None and outcome.prepared.image_caption:
        state.statuses.mark("vision", up=True)


def _log_query(state: ServiceState, outcome) -> None:
    record = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "session_id": outcome.session_id,
        "ood": outcome.answer.ood,
        "latency_ms": outcome.answer.latency_ms,
        "contexts_count": len(outcome.answer.contexts_used),
    }
    with state.log_lock:
        state.query_records.append(record)
        _append_jsonl(state.queries_log, record)
