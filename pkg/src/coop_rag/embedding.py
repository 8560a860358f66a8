"""Text embeddings behind interchangeable backends.

Two backends share a contract (unit-norm float32 vectors of a configured
dimension, 1536 by default):

* ``deterministic_hash`` - character 3-grams of the lowercased text hashed
  into buckets with the splitmix64 finalizer (seed 0), counted, then
  L2-normalized. No network, bit-reproducible across platforms, and cheap
  enough to embed whole corpora in tests.
* ``remote_http`` - POST {base_url}/embed with ``{"model": ..., "inputs":
  [...]}``, expecting ``{"vectors": [[...]]}`` back. Bearer token read from
  a named environment variable; one retry on transport failure.

All vectors are normalized at creation, so downstream cosine similarity of
stored vectors reduces to a dot product.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BackendResponseError,
    BackendStatusError,
    BackendTransportError,
    DimensionMismatchError,
    EmptyTextError,
    InputError,
)

DEFAULT_DIMS = 1536

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class RemoteEmbedderSpec:
    base_url: str
    model_name: str
    auth_env_var: str = ""
    timeout_ms: int = 10_000
    max_in_flight: int = 4


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "deterministic_hash"
    dims: int = DEFAULT_DIMS
    remote: RemoteEmbedderSpec | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic_hash", "remote_http"):
            raise InputError(f"unknown embedder kind: {self.kind!r}")
        if self.dims <= 0:
            raise InputError("dims must be positive")
        if (self.remote is not None) != (self.kind == "remote_http"):
            raise InputError("remote settings required iff kind == remote_http")

    @property
    def fingerprint(self) -> str:
        if self.kind == "deterministic_hash":
            return f"deterministic_hash/splitmix64-seed0/3gram/dims={self.dims}"
        return f"remote_http/{self.remote.model_name}/dims={self.dims}"


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over uint64 (wraparound arithmetic)."""
    z = x + _SM64_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM64_M1
    z = (z ^ (z >> np.uint64(27))) * _SM64_M2
    return z ^ (z >> np.uint64(31))


def _gram_buckets(text: str, dims: int, seed: int = 0) -> np.ndarray:
    """Bucket indices of the text's character 3-grams.

    Texts shorter than 3 characters hash as a single gram so nothing maps
    to the zero vector.
    """
    lowered = text.lower()
    cps = np.frombuffer(lowered.encode("utf-32-le"), dtype=np.uint32).astype(np.uint64)
    with np.errstate(over="ignore"):
        if len(cps) < 3:
            h = np.uint64(seed)
            for cp in cps:
                h = _splitmix64(np.asarray([h ^ cp], dtype=np.uint64))[0]
            hashes = np.asarray([h], dtype=np.uint64)
        else:
            h = _splitmix64(np.full(len(cps) - 2, seed, dtype=np.uint64) ^ cps[:-2])
            h = _splitmix64(h ^ cps[1:-1])
            hashes = _splitmix64(h ^ cps[2:])
    return (hashes % np.uint64(dims)).astype(np.int64)


def hash_embed(text: str, dims: int = DEFAULT_DIMS) -> np.ndarray:
    """Deterministic 3-gram hashing embedder; unit-norm float32 output."""
    if not text.strip():
        raise EmptyTextError("cannot embed empty or whitespace-only text")
    buckets = _gram_buckets(text, dims)
    counts = np.bincount(buckets, minlength=dims).astype(np.float64)
    norm = np.linalg.norm(counts)
    return (counts / norm).astype(np.float32)


def l2_normalize(values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(arr)
    if norm == 0.0:
        raise InputError("cannot normalize a zero vector")
    return (arr / norm).astype(np.float32)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}"
        )
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise InputError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(a, b) / (norm_a * norm_b))


class HashEmbedder:
    """Stateless wrapper so hash and remote embedders share an interface."""

    def __init__(self, spec: EmbedderSpec):
        self.spec = spec

    def embed_text(self, text: str) -> np.ndarray:
        return hash_embed(text, self.spec.dims)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        for i, text in enumerate(texts):
            if not text.strip():
                raise EmptyTextError(f"batch item {i} is empty or whitespace-only")
        return [self.embed_text(t) for t in texts]


class RemoteEmbedder:
    """HTTP embedding backend speaking this package's wire format."""

    def __init__(self, spec: EmbedderSpec, transport=None):
        import threading

        import httpx

        if spec.remote is None:
            raise InputError("remote embedder requires remote settings")
        self.spec = spec
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

    def _post(self, inputs: list[str]) -> list[list[float]]:
        import httpx

        payload = {"model": self.spec.remote.model_name, "inputs": inputs}
        last_exc = None
        for _ in range(2):  # one retry on transport failure
            try:
                with self._in_flight:
                    response = self._client.post("/embed", json=payload)
                break
            except httpx.TransportError as exc:
                last_exc = exc
        else:
            raise BackendTransportError(
                f"embedding backend unreachable: {last_exc}", backend="embedding"
            ) from last_exc
        if response.status_code < 200 or response.status_code >= 300:
            raise BackendStatusError(
                f"embedding backend returned HTTP {response.status_code}",
                backend="embedding",
                status_code=response.status_code,
            )
        try:
            vectors = response.json()["vectors"]
        except Exception as exc:
            raise BackendResponseError(
                "embedding response missing 'vectors'", backend="embedding"
            ) from exc
        if len(vectors) != len(inputs):
            raise BackendResponseError(
                f"expected {len(inputs)} vectors, got {len(vectors)}",
                backend="embedding",
            )
        return vectors

    def _to_vector(self, raw: list[float]) -> np.ndarray:
        if len(raw) != self.spec.dims:
            raise DimensionMismatchError(
                f"backend returned {len(raw)}-dim vector, expected {self.spec.dims}"
            )
        return l2_normalize(np.asarray(raw, dtype=np.float64))

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyTextError("cannot embed empty or whitespace-only text")
        return self._to_vector(self._post([text])[0])

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        for i, text in enumerate(texts):
            if not text.strip():
                raise EmptyTextError(f"batch item {i} is empty or whitespace-only")
        if not texts:
            return []
        return [self._to_vector(raw) for raw in self._post(texts)]


def make_embedder(spec: EmbedderSpec, transport=None):
    if spec.kind == "deterministic_hash":
        return HashEmbedder(spec)
    return RemoteEmbedder(spec, transport=transport)


def embed_text(text: str, spec: EmbedderSpec) -> np.ndarray:
    return make_embedder(spec).embed_text(text)


def embed_batch(texts: list[str], spec: EmbedderSpec) -> list[np.ndarray]:
    return make_embedder(spec).embed_batch(texts)
