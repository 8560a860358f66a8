"""Chunk store with exact-scan vector search and BM25 lexical search.

The index holds every chunk's text, metadata, float32 embedding row, and an
inverted posting map. Both searches are exact (no ANN): the corpus scale
this engine targets is thousands of chunks, where a dense scan through the
compiled kernels stays comfortably inside the latency budget and results
are fully deterministic. Ties always break by ascending chunk_id.

On-disk layout (one directory):

* ``manifest.json``  - dimensions, counts, BM25 parameters, checksums
* ``chunks.jsonl``   - full chunk records, one per line
* ``embeddings.bin`` - row-major little-endian float32, row i matching line i
* ``postings.jsonl`` - one posting list per line, term-sorted
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import kernels
from .concurrency import ReadWriteLock
from .corpus import Chunk, ChunkMetadata
from .errors import (
    ChecksumError,
    DimensionMismatchError,
    EmptyIndexError,
    InputError,
    MissingManifestError,
    PersistenceError,
    UnknownChunkError,
)
from .text import tokenize

SCHEMA_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


@dataclass(frozen=True)
class ScoredHit:
    chunk_ref: str
    score: float
    kind: str  # "semantic" | "lexical"


@dataclass
class IndexManifest:
    dims: int
    chunk_count: int
    bm25_params: dict
    avg_doc_len: float
    created_at: str
    embedder_fingerprint: str


class KnowledgeIndex:
    """In-memory chunk index; many concurrent readers or one writer."""

    def __init__(
        self,
        dims: int,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
        embedder_fingerprint: str = "",
        created_at: str | None = None,
    ):
        if dims <= 0:
            raise InputError("dims must be positive")
        self.dims = dims
        self.k1 = float(k1)
        self.b = float(b)
        self.embedder_fingerprint = embedder_fingerprint
        self.created_at = created_at or datetime.now(timezone.utc).isoformat()
        self._lock = threading.RLock()
        self._rw = ReadWriteLock()
        self._chunks: list[Chunk] = []
        self._row_of: dict[str, int] = {}
        self._matrix = np.zeros((0, dims), dtype=np.float32)
        self._doc_lens = np.zeros(0, dtype=np.int64)
        # term -> {row: tf}; compiled to flat arrays lazily for the kernels
        self._postings: dict[str, dict[int, int]] = {}
        self._dirty = True
        self._id_rank = np.zeros(0, dtype=np.int64)
        self._k1norm = np.zeros(0, dtype=np.float64)
        self._compiled_postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    # --- basic accessors ------------------------------------------------

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def chunk_count(self) -> int:
        return len(self._chunks)

    @property
    def avg_doc_len(self) -> float:
        if not self._chunks:
            return 0.0
        return float(np.mean(self._doc_lens[: len(self._chunks)]))

    def manifest(self) -> IndexManifest:
        return IndexManifest(
            dims=self.dims,
            chunk_count=self.chunk_count,
            bm25_params={"k1": self.k1, "b": self.b},
            avg_doc_len=self.avg_doc_len,
            created_at=self.created_at,
            embedder_fingerprint=self.embedder_fingerprint,
        )

    def chunk_ids(self) -> list[str]:
        return [c.chunk_id for c in self._chunks]

    def get_chunk(self, chunk_ref: str) -> Chunk:
        row = self._row_of.get(chunk_ref)
        if row is None:
            raise UnknownChunkError(f"unknown chunk_ref: {chunk_ref!r}")
        return self._chunks[row]

    def get_vector(self, chunk_ref: str) -> np.ndarray:
        row = self._row_of.get(chunk_ref)
        if row is None:
            raise UnknownChunkError(f"unknown chunk_ref: {chunk_ref!r}")
        return self._matrix[row].copy()

    def row_index(self, chunk_ref: str) -> int:
        row = self._row_of.get(chunk_ref)
        if row is None:
            raise UnknownChunkError(f"unknown chunk_ref: {chunk_ref!r}")
        return row

    # --- mutation ---------------------------------------------------------

    def upsert_chunks(self, chunks: list[Chunk], vectors: list[np.ndarray]) -> int:
        if len(chunks) != len(vectors):
            raise InputError(
                f"chunks/vectors length mismatch: {len(chunks)} vs {len(vectors)}"
            )
        for vec in vectors:
            arr = np.asarray(vec)
            if arr.ndim != 1 or arr.shape[0] != self.dims:
                raise DimensionMismatchError(
                    f"vector has {arr.shape[-1] if arr.ndim else 0} dims, "
                    f"index expects {self.dims}"
                )
        with self._rw.write(), self._lock:
            for chunk, vec in zip(chunks, vectors):
                self._upsert_one(chunk, np.asarray(vec, dtype=np.float32))
            self._dirty = True
        return len(chunks)

    def _upsert_one(self, chunk: Chunk, vec: np.ndarray) -> None:
        row = self._row_of.get(chunk.chunk_id)
        if row is not None:
            self._remove_postings(row, self._chunks[row].text)
        else:
            row = len(self._chunks)
            self._chunks.append(chunk)
            self._row_of[chunk.chunk_id] = row
            if row >= self._matrix.shape[0]:
                self._grow(row + 1)
        self._chunks[row] = chunk
        self._matrix[row] = vec
        tokens = tokenize(chunk.text)
        self._doc_lens[row] = len(tokens)
        for term in tokens:
            bucket = self._postings.setdefault(term, {})
            bucket[row] = bucket.get(row, 0) + 1

    def _remove_postings(self, row: int, old_text: str) -> None:
        for term in set(tokenize(old_text)):
            bucket = self._postings.get(term)
            if bucket is not None:
                bucket.pop(row, None)
                if not bucket:
                    del self._postings[term]

    def _grow(self, need: int) -> None:
        capacity = max(need, max(8, self._matrix.shape[0] * 2))
        matrix = np.zeros((capacity, self.dims), dtype=np.float32)
        matrix[: self._matrix.shape[0]] = self._matrix
        self._matrix = matrix
        lens = np.zeros(capacity, dtype=np.int64)
        lens[: self._doc_lens.shape[0]] = self._doc_lens
        self._doc_lens = lens

    # --- compiled state ---------------------------------------------------

    def _compile(self) -> None:
        if not self._dirty:
            return
        with self._lock:
            if not self._dirty:
                return
            n = len(self._chunks)
            ids = [c.chunk_id for c in self._chunks]
            self._id_rank = np.argsort(np.argsort(np.asarray(ids))).astype(np.int64)
            avg = self.avg_doc_len
            if n and avg > 0:
                lens = self._doc_lens[:n].astype(np.float64)
                self._k1norm = self.k1 * (1.0 - self.b + self.b * lens / avg)
            else:
                self._k1norm = np.full(n, self.k1, dtype=np.float64)
            self._compiled_postings = {
                term: (
                    np.fromiter(bucket.keys(), dtype=np.int64, count=len(bucket)),
                    np.fromiter(bucket.values(), dtype=np.float64, count=len(bucket)),
                )
                for term, bucket in self._postings.items()
            }
            self._dirty = False

    def _idf(self, term: str) -> float:
        df = len(self._postings.get(term, ()))
        if df == 0:
            return 0.0
        n = len(self._chunks)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    # --- search -----------------------------------------------------------

    def semantic_scores(self, query_vec: np.ndarray) -> np.ndarray:
        """Cosine of the query against every stored (unit-norm) vector."""
        q = np.asarray(query_vec)
        if q.ndim != 1 or q.shape[0] != self.dims:
            raise DimensionMismatchError(
                f"query has {q.shape[-1] if q.ndim else 0} dims, "
                f"index expects {self.dims}"
            )
        with self._rw.read():
            self._compile()
            n = len(self._chunks)
            return kernels.dot_scan(self._matrix[:n], q.astype(np.float32))

    def vector_search(
        self, query_vec: np.ndarray, n: int, scores: np.ndarray | None = None
    ) -> list[ScoredHit]:
        """Top-n chunks by cosine, ties by ascending chunk_id.

        ``scores`` lets callers that already ran :meth:`semantic_scores`
        reuse the scan instead of paying for it twice.
        """
        if n <= 0:
            raise InputError("n must be positive")
        with self._rw.read():
            if scores is None:
                scores = self.semantic_scores(query_vec)
            order = np.lexsort((self._id_rank, -scores))
            top = order[: min(n, len(order))]
            return [
                ScoredHit(self._chunks[row].chunk_id, float(scores[row]), "semantic")
                for row in top
            ]

    def lexical_scores(self, query_tokens: list[str]) -> np.ndarray:
        """BM25 score of every chunk for the query token list.

        Duplicate query tokens contribute once per occurrence, matching the
        per-term sum in :meth:`bm25_score`.
        """
        with self._rw.read():
            self._compile()
            n = len(self._chunks)
            rows_parts, tfs_parts, idf_parts = [], [], []
            for term in query_tokens:
                compiled = self._compiled_postings.get(term)
                if compiled is None:
                    continue
                rows, tfs = compiled
                rows_parts.append(rows)
                tfs_parts.append(tfs)
                idf_parts.append(
                    np.full(len(rows), self._idf(term), dtype=np.float64)
                )
            if not rows_parts:
                return np.zeros(n, dtype=np.float64)
            return kernels.bm25_accumulate(
                n,
                np.concatenate(rows_parts),
                np.concatenate(tfs_parts),
                np.concatenate(idf_parts),
                self._k1norm,
                self.k1,
            )

    def bm25_score(self, query_tokens: list[str], chunk_ref: str) -> float:
        with self._rw.read():
            row = self._row_of.get(chunk_ref)
            if row is None:
                raise UnknownChunkError(f"unknown chunk_ref: {chunk_ref!r}")
            self._compile()
            score = 0.0
            for term in query_tokens:
                bucket = self._postings.get(term)
                if not bucket:
                    continue
                tf = bucket.get(row)
                if not tf:
                    continue
                score += (
                    self._idf(term)
                    * tf
                    * (self.k1 + 1.0)
                    / (tf + self._k1norm[row])
                )
            return score

    def lexical_search(self, query_tokens: list[str], n: int) -> list[ScoredHit]:
        if n <= 0:
            raise InputError("n must be positive")
        if not self._chunks:
            raise EmptyIndexError("lexical_search requires a non-empty index")
        with self._rw.read():
            scores = self.lexical_scores(query_tokens)
            candidates = np.flatnonzero(scores > 0.0)
            if len(candidates) == 0:
                return []
            order = candidates[
                np.lexsort((self._id_rank[candidates], -scores[candidates]))
            ]
            top = order[: min(n, len(order))]
            return [
                ScoredHit(self._chunks[row].chunk_id, float(scores[row]), "lexical")
                for row in top
            ]

    # --- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> IndexManifest:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        with self._rw.read():
            return self._save_locked(path)

    def _save_locked(self, path: Path) -> IndexManifest:
        n = len(self._chunks)
        chunks_payload = "".join(
            json.dumps(_chunk_to_record(c), ensure_ascii=False, sort_keys=True) + "\n"
            for c in self._chunks
        ).encode("utf-8")
        embeddings_payload = (
            np.ascontiguousarray(self._matrix[:n]).astype("<f4").tobytes()
        )
        postings_payload = "".join(
            json.dumps(
                {
                    "term": term,
                    "entries": sorted(
                        [self._chunks[row].chunk_id, tf]
                        for row, tf in self._postings[term].items()
                    ),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
            + "\n"
            for term in sorted(self._postings)
        ).encode("utf-8")
        files = {
            "chunks.jsonl": chunks_payload,
            "embeddings.bin": embeddings_payload,
            "postings.jsonl": postings_payload,
        }
        for name, payload in files.items():
            (path / name).write_bytes(payload)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "dims": self.dims,
            "chunk_count": n,
            "bm25_params": {"k1": self.k1, "b": self.b},
            "avg_doc_len": self.avg_doc_len,
            "created_at": self.created_at,
            "embedder_fingerprint": self.embedder_fingerprint,
            "checksums": {
                name: hashlib.sha256(payload).hexdigest()
                for name, payload in files.items()
            },
        }
        (path / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return self.manifest()


def _chunk_to_record(chunk: Chunk) -> dict:
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "ordinal": chunk.ordinal,
        "text": chunk.text,
        "char_span": list(chunk.char_span),
        "metadata": {
            "source": chunk.metadata.source,
            "title": chunk.metadata.title,
            "publication_date": chunk.metadata.publication_date,
            "topics": list(chunk.metadata.topics),
            "relevance_score": chunk.metadata.relevance_score,
        },
    }


def _chunk_from_record(record: dict) -> Chunk:
    meta = record.get("metadata") or {}
    return Chunk(
        chunk_id=record["chunk_id"],
        doc_id=record["doc_id"],
        ordinal=record["ordinal"],
        text=record["text"],
        char_span=tuple(record["char_span"]),
        metadata=ChunkMetadata(
            source=meta.get("source", ""),
            title=meta.get("title", ""),
            publication_date=meta.get("publication_date"),
            topics=tuple(meta.get("topics") or ()),
            relevance_score=meta.get("relevance_score"),
        ),
    )


def save_index(index: KnowledgeIndex, path: str | Path) -> IndexManifest:
    return index.save(path)


def load_index(path: str | Path, expected_dims: int | None = None) -> KnowledgeIndex:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise MissingManifestError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"manifest.json is not valid JSON: {exc}") from exc
    dims = int(manifest["dims"])
    if expected_dims is not None and dims != expected_dims:
        raise DimensionMismatchError(
            f"index dims {dims} do not match configured dims {expected_dims}"
        )
    checksums = manifest.get("checksums") or {}
    payloads = {}
    for name in ("chunks.jsonl", "embeddings.bin", "postings.jsonl"):
        file_path = path / name
        if not file_path.exists():
            raise PersistenceError(f"index file missing: {file_path}")
        payload = file_path.read_bytes()
        digest = hashlib.sha256(payload).hexdigest()
        if checksums.get(name) != digest:
            raise ChecksumError(
                f"checksum mismatch for {name}: "
                f"manifest {checksums.get(name)}, file {digest}"
            )
        payloads[name] = payload

    chunk_count = int(manifest["chunk_count"])
    params = manifest.get("bm25_params") or {}
    index = KnowledgeIndex(
        dims=dims,
        k1=float(params.get("k1", DEFAULT_K1)),
        b=float(params.get("b", DEFAULT_B)),
        embedder_fingerprint=manifest.get("embedder_fingerprint", ""),
        created_at=manifest.get("created_at"),
    )
    chunk_lines = payloads["chunks.jsonl"].decode("utf-8").splitlines()
    if len(chunk_lines) != chunk_count:
        raise PersistenceError(
            f"chunks.jsonl has {len(chunk_lines)} records, "
            f"manifest says {chunk_count}"
        )
    raw = np.frombuffer(payloads["embeddings.bin"], dtype="<f4")
    if raw.size != chunk_count * dims:
        raise PersistenceError(
            f"embeddings.bin holds {raw.size} floats, "
            f"expected {chunk_count * dims}"
        )
    matrix = raw.reshape(chunk_count, dims)
    chunks = [_chunk_from_record(json.loads(line)) for line in chunk_lines]
    index.upsert_chunks(chunks, list(matrix))

    # The postings file is authoritative for the lexical side; verify it
    # agrees with what re-tokenization produced so a hand-edited file
    # cannot silently diverge from the scored state.
    rebuilt = index._postings
    for line in payloads["postings.jsonl"].decode("utf-8").splitlines():
        record = json.loads(line)
        term = record["term"]
        entries = {ref: tf for ref, tf in record["entries"]}
        bucket = rebuilt.get(term, {})
        stored = {index._chunks[row].chunk_id: tf for row, tf in bucket.items()}
        if stored != entries:
            raise PersistenceError(
                f"postings.jsonl disagrees with chunk text for term {term!r}"
            )
    return index
