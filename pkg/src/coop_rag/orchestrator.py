"""Conversation orchestration: sessions, prompt assembly, grounded answers.

The prompt template is fixed and rendered byte-for-byte; tests pin it with
a golden file. History and retrieved contexts fill named slots, and the
session's response style appends exactly one trailing instruction line.

Two generation backends share a contract: ``extractive_stub`` answers with
the first two sentences of each retrieved context (deterministic and
network-free, which makes end-to-end tests and the evaluation harness
reproducible), and ``remote_http`` posts the rendered prompt to an external
model service.
"""

from __future__ import annotations

import os
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .corpus import Chunk
from .errors import (
    BackendResponseError,
    BackendStatusError,
    BackendTransportError,
    InputError,
    UnknownSessionError,
)
from .index import KnowledgeIndex
from .lexicon import DomainLexicon
from .query import PreparedQuery, prepare_query
from .retrieval import RetrievalConfig, RetrievalResult, retrieve

PROMPT_TEMPLATE = (
    "Respond to the question based on the provided context and conversation "
    "history. Be concise and accurate. If the question refers to previous "
    "messages, use the history to provide context.\n"
    "\n"
    "Conversation History:\n"
    "{history}\n"
    "\n"
    "Relevant Contexts from Knowledge Base:\n"
    "{contexts}\n"
    "\n"
    "Question:\n"
    "{question}\n"
    "\n"
    "{style_instruction}"
)

STYLE_INSTRUCTIONS = {
    "concise": "Answer in at most 120 words.",
    "detailed": "Provide a detailed answer with practical recommendations.",
}

EMPTY_BLOCK = "(none)"
NO_CONTEXT_ANSWER = "No relevant context found."

DEFAULT_HISTORY_WINDOW = 10
DEFAULT_CLARIFICATION = (
    "This assistant covers poultry topics; please rephrase your question to "
    "specify the poultry species or topic."
)


@dataclass
class Turn:
    question: str
    answer: str
    timestamp: datetime
    contexts_used: list[str] = field(default_factory=list)


@dataclass
class Session:
    session_id: str
    turns: list[Turn] = field(default_factory=list)
    style: str = "concise"
    created_at: datetime = field(
        default_factory=lambda: datetime.now(timezone.utc)
    )


@dataclass
class PromptBundle:
    rendered: str
    history_block: str
    contexts_block: str
    question_block: str


@dataclass
class Answer:
    text: str
    citations: list[tuple[str, str]]
    contexts_used: list[str]
    ood: bool
    latency_ms: int
    style: str


@dataclass(frozen=True)
class RemoteGenerationSpec:
    base_url: str
    model_name: str
    auth_env_var: str = ""
    timeout_ms: int = 30_000
    temperature: float = 0.2
    max_in_flight: int = 4


@dataclass(frozen=True)
class GenerationBackendSpec:
    kind: str = "extractive_stub"
    remote: RemoteGenerationSpec | None = None

    def __post_init__(self):
        if self.kind not in ("extractive_stub", "remote_http"):
            raise InputError(f"unknown generation backend kind: {self.kind!r}")
        if (self.remote is not None) != (self.kind == "remote_http"):
            raise InputError("remote settings required iff kind == remote_http")


# --- prompt assembly ----------------------------------------------------------


def _render_history(turns: list[Turn]) -> str:
    if not turns:
        return EMPTY_BLOCK
    return "\n\n".join(
        f"User: {turn.question}\nAssistant: {turn.answer}" for turn in turns
    )


def _flatten(text: str) -> str:
    # Context lines must stay one-per-line in the prompt.
    return " ".join(text.split())


def _render_contexts(contexts: list[Chunk]) -> str:
    if not contexts:
        return EMPTY_BLOCK
    return "\n".join(
        f"[{i}] ({chunk.metadata.source or 'unknown'}) {_flatten(chunk.text)}"
        for i, chunk in enumerate(contexts, start=1)
    )


def assemble_prompt(
    history: list[Turn],
    contexts: list[Chunk],
    question: str,
    style: str = "concise",
    history_window: int = DEFAULT_HISTORY_WINDOW,
) -> PromptBundle:
    if not question or not question.strip():
        raise InputError("question must be non-empty")
    if style not in STYLE_INSTRUCTIONS:
        raise InputError(f"unknown style: {style!r}")
    windowed = history[-history_window:] if history_window > 0 else []
    history_block = _render_history(windowed)
    contexts_block = _render_contexts(contexts)
    rendered = PROMPT_TEMPLATE.format(
        history=history_block,
        contexts=contexts_block,
        question=question,
        style_instruction=STYLE_INSTRUCTIONS[style],
    )
    return PromptBundle(
        rendered=rendered,
        history_block=history_block,
        contexts_block=contexts_block,
        question_block=question,
    )


# --- generation backends ------------------------------------------------------

_CONTEXT_LINE_RE = re.compile(r"^\[\d+\] \([^)]*\) ")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def _leading_sentences(text: str, count: int = 2) -> str:
    sentences = [s for s in _SENTENCE_SPLIT_RE.split(text.strip()) if s]
    return " ".join(sentences[:count])


class ExtractiveStubBackend:
    """Deterministic test backend: leading sentences of each context."""

    def __init__(self):
        self.calls = 0

    def generate(self, bundle: PromptBundle) -> str:
        self.calls += 1
        if bundle.contexts_block == EMPTY_BLOCK:
            return NO_CONTEXT_ANSWER
        parts = []
        for line in bundle.contexts_block.split("\n"):
            body = _CONTEXT_LINE_RE.sub("", line)
            extracted = _leading_sentences(body)
            if extracted:
                parts.append(extracted)
        return " ".join(parts) if parts else NO_CONTEXT_ANSWER


class RemoteGenerationBackend:
    """HTTP generation backend: POST {base_url}/generate."""

    def __init__(self, spec: GenerationBackendSpec, transport=None):
        import httpx

        if spec.remote is None:
            raise InputError("remote generation requires remote settings")
        self.spec = spec
        self.calls = 0
        self._in_flight = threading.BoundedSemaphore(
            max(1, spec.remote.max_in_flight)
        )
        headers = {}
        token = os.environ.get(spec.remote.auth_env_var or "", "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=spec.remote.base_url,
            headers=headers,
            timeout=spec.remote.timeout_ms / 1000.0,
            transport=transport,
        )

    def generate(self, bundle: PromptBundle) -> str:
        import httpx

        self.calls += 1
        payload = {
            "model": self.spec.remote.model_name,
            "prompt": bundle.rendered,
            "temperature": self.spec.remote.temperature,
        }
        try:
            with self._in_flight:
                response = self._client.post("/generate", json=payload)
        except httpx.TimeoutException as exc:
            raise BackendTransportError(
                f"generation backend timed out: {exc}", backend="generation"
            ) from exc
        except httpx.TransportError as exc:
            raise BackendTransportError(
                f"generation backend unreachable: {exc}", backend="generation"
            ) from exc
        if response.status_code < 200 or response.status_code >= 300:
            raise BackendStatusError(
                f"generation backend returned HTTP {response.status_code}",
                backend="generation",
                status_code=response.status_code,
            )
        try:
            text = response.json()["text"]
        except Exception as exc:
            raise BackendResponseError(
                "generation response missing 'text'", backend="generation"
            ) from exc
        if not isinstance(text, str) or not text.strip():
            raise BackendResponseError(
                "generation backend returned an empty completion",
                backend="generation",
            )
        return text


def make_generation_backend(spec: GenerationBackendSpec, transport=None):
    if spec.kind == "extractive_stub":
        return ExtractiveStubBackend()
    return RemoteGenerationBackend(spec, transport=transport)


def generate_answer(bundle: PromptBundle, backend) -> str:
    return backend.generate(bundle)


def append_citations(text: str, contexts: list[Chunk]) -> str:
    """Add a deduplicated Sources footer naming each context's origin."""
    if not contexts:
        return text
    seen: list[tuple[str, str]] = []
    for chunk in contexts:
        pair = (chunk.metadata.source or "unknown", chunk.metadata.title)
        if pair not in seen:
            seen.append(pair)
    lines = "\n".join(f"- {source}: {title}" for source, title in seen)
    return f"{text}\n\nSources:\n{lines}"


def citations_for(contexts: list[Chunk]) -> list[tuple[str, str]]:
    seen: list[tuple[str, str]] = []
    for chunk in contexts:
        pair = (chunk.metadata.source or "unknown", chunk.metadata.title)
        if pair not in seen:
            seen.append(pair)
    return seen


# --- session store --------------------------------------------------------------


class SessionStore:
    """In-memory sessions with optional append-only JSONL persistence.

    Each recorded turn appends one line; on construction an existing file is
    replayed so a restarted service resumes its conversations. Sessions
    without recorded turns (e.g. only out-of-domain clarifications) are not
    persisted.
    """

    def __init__(self, path: str | Path | None = None):
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()
        self._path = Path(path) if path else None
        if self._path and self._path.exists():
            self._replay()

    def _replay(self) -> None:
        import json

        with self._path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                session = self._sessions.get(record["session_id"])
                if session is None:
                    session = Session(
                        session_id=record["session_id"],
                        style=record.get("style", "concise"),
                        created_at=datetime.fromisoformat(record["created_at"]),
                    )
                    self._sessions[session.session_id] = session
                session.style = record.get("style", session.style)
                session.turns.append(
                    Turn(
                        question=record["question"],
                        answer=record["answer"],
                        timestamp=datetime.fromisoformat(record["timestamp"]),
                        contexts_used=list(record.get("contexts_used", [])),
                    )
                )

    def _append_line(self, session: Session, turn: Turn) -> None:
        import json

        if self._path is None:
            return
        self._path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "session_id": session.session_id,
            "style": session.style,
            "created_at": session.created_at.isoformat(),
            "question": turn.question,
            "answer": turn.answer,
            "timestamp": turn.timestamp.isoformat(),
            "contexts_used": turn.contexts_used,
        }
        with self._path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            fh.flush()

    def create(self, style: str = "concise") -> Session:
        if style not in STYLE_INSTRUCTIONS:
            raise InputError(f"unknown style: {style!r}")
        session = Session(session_id=uuid.uuid4().hex, style=style)
        with self._registry_lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(f"unknown session: {session_id!r}")
        return session

    def session_ids(self) -> list[str]:
        return list(self._sessions)

    def lock_for(self, session_id: str) -> threading.RLock:
        with self._registry_lock:
            lock = self._locks.get(session_id)
            if lock is None:
                lock = threading.RLock()
                self._locks[session_id] = lock
            return lock

    def record_turn(
        self,
        session_id: str,
        question: str,
        answer: str,
        contexts_used: list[str],
        timestamp: datetime | None = None,
    ) -> Session:
        session = self.get(session_id)
        turn = Turn(
            question=question,
            answer=answer,
            timestamp=timestamp or datetime.now(timezone.utc),
            contexts_used=list(contexts_used),
        )
        session.turns.append(turn)
        self._append_line(session, turn)
        return session


# --- chat handler ----------------------------------------------------------------


@dataclass
class ChatDeps:
    index: KnowledgeIndex
    lexicon: DomainLexicon
    embedder: object
    generation_backend: object
    session_store: SessionStore
    retrieval_cfg: RetrievalConfig = field(default_factory=RetrievalConfig)
    vision_backend: object | None = None
    ood_threshold: float = 0.35
    clarification_message: str = DEFAULT_CLARIFICATION
    history_window: int = DEFAULT_HISTORY_WINDOW
    clock: object = time.perf_counter


@dataclass
class ChatOutcome:
    answer: Answer
    session_id: str
    prepared: PreparedQuery | None = None
    retrieval: RetrievalResult | None = None


def handle_chat(
    session_id: str | None,
    raw_text: str,
    image: bytes | None,
    deps: ChatDeps,
    style: str | None = None,
) -> ChatOutcome:
    """Answer one message, creating the session when none is given."""
    started = deps.clock()
    store = deps.session_store
    if session_id is None:
        session = store.create(style or "concise")
    else:
        session = store.get(session_id)
        if style is not None:
            if style not in STYLE_INSTRUCTIONS:
                raise InputError(f"unknown style: {style!r}")
            session.style = style

    with store.lock_for(session.session_id):
        prepared = prepare_query(
            raw_text,
            image,
            deps.lexicon,
            deps.embedder,
            deps.index,
            retrieval_cfg=deps.retrieval_cfg,
            ood_threshold=deps.ood_threshold,
            vision_backend=deps.vision_backend,
        )
        if prepared.ood_flag:
            latency_ms = max(0, int((deps.clock() - started) * 1000))
            answer = Answer(
                text=deps.clarification_message,
                citations=[],
                contexts_used=[],
                ood=True,
                latency_ms=latency_ms,
                style=session.style,
            )
            return ChatOutcome(answer, session.session_id, prepared, None)

        result = retrieve(prepared, deps.index, deps.retrieval_cfg)
        chunks = [chunk for chunk, _ in result.contexts]
        bundle = assemble_prompt(
            session.turns,
            chunks,
            raw_text,
            style=session.style,
            history_window=deps.history_window,
        )
        generated = generate_answer(bundle, deps.generation_backend)
        full_text = append_citations(generated, chunks)
        latency_ms = max(0, int((deps.clock() - started) * 1000))
        answer = Answer(
            text=full_text,
            citations=citations_for(chunks),
            contexts_used=result.chunk_refs(),
            ood=False,
            latency_ms=latency_ms,
            style=session.style,
        )
        # History keeps the bare generation (no Sources footer) so later
        # prompts stay focused on content.
        store.record_turn(
            session.session_id, raw_text, generated, result.chunk_refs()
        )
        return ChatOutcome(answer, session.session_id, prepared, result)
