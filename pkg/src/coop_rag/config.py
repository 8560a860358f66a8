"""Service configuration: JSON file in, validated dataclasses out.

Unknown keys are rejected at every level so typos fail fast instead of
silently running with defaults. The default values reproduce the engine's
reference configuration exactly: fusion weight alpha 0.70, k 6 retrieved
contexts, 800-character chunks with 80-character overlap, 1536-dimension
embeddings.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ChunkConfig
from .embedding import EmbedderSpec, RemoteEmbedderSpec
from .errors import MalformedRecordError
from .orchestrator import (
    DEFAULT_CLARIFICATION,
    DEFAULT_HISTORY_WINDOW,
    GenerationBackendSpec,
    RemoteGenerationSpec,
)
from .query import DEFAULT_OOD_THRESHOLD
from .retrieval import RetrievalConfig

CONFIG_ENV_VAR = "COOP_RAG_CONFIG"

DEFAULT_MAX_REQUEST_BYTES = 8 * 1024 * 1024
DEFAULT_MAX_IMAGE_BASE64_BYTES = 5 * 1024 * 1024  # 5 MiB of base64 payload


@dataclass(frozen=True)
class VisionSpec:
    kind: str = "stub"
    base_url: str = ""
    auth_env_var: str = ""
    timeout_ms: int = 20_000

    def __post_init__(self):
        if self.kind not in ("stub", "remote_http"):
            raise MalformedRecordError(f"unknown vision backend kind: {self.kind!r}")
        if self.kind == "remote_http" and not self.base_url:
            raise MalformedRecordError("remote vision backend requires base_url")


@dataclass(frozen=True)
class Limits:
    max_request_bytes: int = DEFAULT_MAX_REQUEST_BYTES
    max_image_base64_bytes: int = DEFAULT_MAX_IMAGE_BASE64_BYTES

    def __post_init__(self):
        if self.max_request_bytes <= 0 or self.max_image_base64_bytes <= 0:
            raise MalformedRecordError("limits must be positive")


@dataclass(frozen=True)
class ServiceConfig:
    bind_address: str = "127.0.0.1:8080"
    data_dir: str = "./data"
    index_path: str | None = None
    lexicon_path: str | None = None
    ood_threshold: float = DEFAULT_OOD_THRESHOLD
    history_window: int = DEFAULT_HISTORY_WINDOW
    clarification_message: str = DEFAULT_CLARIFICATION
    ingest_enabled: bool = False
    cors_origins: tuple[str, ...] = ("*",)
    auth_token_env: str | None = None
    limits: Limits = field(default_factory=Limits)
    chunking: ChunkConfig = field(default_factory=ChunkConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    generation: GenerationBackendSpec = field(default_factory=GenerationBackendSpec)
    vision: VisionSpec = field(default_factory=VisionSpec)

    def __post_init__(self):
        if not 0.0 <= self.ood_threshold <= 1.0:
            raise MalformedRecordError("ood_threshold must be in [0, 1]")
        if self.history_window < 0:
            raise MalformedRecordError("history_window must be non-negative")

    @property
    def resolved_index_path(self) -> Path:
        if self.index_path:
            return Path(self.index_path)
        return Path(self.data_dir) / "index"


def _require_keys(data: dict, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise MalformedRecordError(
            f"unknown config keys in {where}: {sorted(unknown)}"
        )


def _parse_remote_embedder(data: dict | None) -> RemoteEmbedderSpec | None:
    if data is None:
        return None
    _require_keys(
        data,
        {"base_url", "model_name", "auth_env_var", "timeout_ms", "max_in_flight"},
        "embedder.remote",
    )
    return RemoteEmbedderSpec(
        base_url=data["base_url"],
        model_name=data.get("model_name", ""),
        auth_env_var=data.get("auth_env_var", ""),
        timeout_ms=int(data.get("timeout_ms", 10_000)),
        max_in_flight=int(data.get("max_in_flight", 4)),
    )


def _parse_embedder(data: dict | None) -> EmbedderSpec:
    if data is None:
        return EmbedderSpec()
    _require_keys(data, {"kind", "dims", "remote"}, "embedder")
    return EmbedderSpec(
        kind=data.get("kind", "deterministic_hash"),
        dims=int(data.get("dims", EmbedderSpec().dims)),
        remote=_parse_remote_embedder(data.get("remote")),
    )


def _parse_remote_generation(data: dict | None) -> RemoteGenerationSpec | None:
    if data is None:
        return None
    _require_keys(
        data,
        {"base_url", "model_name", "auth_env_var", "timeout_ms", "temperature",
         "max_in_flight"},
        "generation.remote",
    )
    return RemoteGenerationSpec(
        base_url=data["base_url"],
        model_name=data.get("model_name", ""),
        auth_env_var=data.get("auth_env_var", ""),
        timeout_ms=int(data.get("timeout_ms", 30_000)),
        temperature=float(data.get("temperature", 0.2)),
        max_in_flight=int(data.get("max_in_flight", 4)),
    )


def _parse_generation(data: dict | None) -> GenerationBackendSpec:
    if data is None:
        return GenerationBackendSpec()
    _require_keys(data, {"kind", "remote"}, "generation")
    return GenerationBackendSpec(
        kind=data.get("kind", "extractive_stub"),
        remote=_parse_remote_generation(data.get("remote")),
    )


def _parse_vision(data: dict | None) -> VisionSpec:
    if data is None:
        return VisionSpec()
    _require_keys(
        data, {"kind", "base_url", "auth_env_var", "timeout_ms"}, "vision"
    )
    return VisionSpec(
        kind=data.get("kind", "stub"),
        base_url=data.get("base_url", ""),
        auth_env_var=data.get("auth_env_var", ""),
        timeout_ms=int(data.get("timeout_ms", 20_000)),
    )


def _parse_chunking(data: dict | None) -> ChunkConfig:
    if data is None:
        return ChunkConfig()
    _require_keys(
        data, {"max_chars", "overlap_chars", "separator_hierarchy"}, "chunking"
    )
    defaults = ChunkConfig()
    hierarchy = data.get("separator_hierarchy")
    return ChunkConfig(
        max_chars=int(data.get("max_chars", defaults.max_chars)),
        overlap_chars=int(data.get("overlap_chars", defaults.overlap_chars)),
        separator_hierarchy=(
            tuple(hierarchy) if hierarchy is not None
            else defaults.separator_hierarchy
        ),
    )


def _parse_retrieval(data: dict | None) -> RetrievalConfig:
    if data is None:
        return RetrievalConfig()
    _require_keys(
        data,
        {"alpha", "k", "lambda", "pool_size", "boost_per_keyword", "boost_cap"},
        "retrieval",
    )
    defaults = RetrievalConfig()
    return RetrievalConfig(
        alpha=float(data.get("alpha", defaults.alpha)),
        k=int(data.get("k", defaults.k)),
        mmr_lambda=float(data.get("lambda", defaults.mmr_lambda)),
        pool_size=int(data.get("pool_size", defaults.pool_size)),
        boost_per_keyword=float(
            data.get("boost_per_keyword", defaults.boost_per_keyword)
        ),
        boost_cap=float(data.get("boost_cap", defaults.boost_cap)),
    )


def _parse_limits(data: dict | None) -> Limits:
    if data is None:
        return Limits()
    _require_keys(data, {"max_request_bytes", "max_image_base64_bytes"}, "limits")
    defaults = Limits()
    return Limits(
        max_request_bytes=int(
            data.get("max_request_bytes", defaults.max_request_bytes)
        ),
        max_image_base64_bytes=int(
            data.get("max_image_base64_bytes", defaults.max_image_base64_bytes)
        ),
    )


_TOP_LEVEL_KEYS = {
    "bind_address",
    "data_dir",
    "index_path",
    "lexicon_path",
    "ood_threshold",
    "history_window",
    "clarification_message",
    "ingest_enabled",
    "cors_origins",
    "auth_token_env",
    "limits",
    "chunking",
    "retrieval",
    "embedder",
    "generation",
    "vision",
}


def config_from_dict(data: dict) -> ServiceConfig:
    if not isinstance(data, dict):
        raise MalformedRecordError("config root must be a JSON object")
    _require_keys(data, _TOP_LEVEL_KEYS, "config")
    defaults = ServiceConfig()
    return ServiceConfig(
        bind_address=data.get("bind_address", defaults.bind_address),
        data_dir=data.get("data_dir", defaults.data_dir),
        index_path=data.get("index_path"),
        lexicon_path=data.get("lexicon_path"),
        ood_threshold=float(data.get("ood_threshold", defaults.ood_threshold)),
        history_window=int(data.get("history_window", defaults.history_window)),
        clarification_message=data.get(
            "clarification_message", defaults.clarification_message
        ),
        ingest_enabled=bool(data.get("ingest_enabled", defaults.ingest_enabled)),
        cors_origins=tuple(data.get("cors_origins", defaults.cors_origins)),
        auth_token_env=data.get("auth_token_env"),
        limits=_parse_limits(data.get("limits")),
        chunking=_parse_chunking(data.get("chunking")),
        retrieval=_parse_retrieval(data.get("retrieval")),
        embedder=_parse_embedder(data.get("embedder")),
        generation=_parse_generation(data.get("generation")),
        vision=_parse_vision(data.get("vision")),
    )


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Load config from an explicit path, $COOP_RAG_CONFIG, or defaults."""
    if path is None:
        env_path = os.environ.get(CONFIG_ENV_VAR, "")
        path = env_path or None
    if path is None:
        return ServiceConfig()
    raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)
