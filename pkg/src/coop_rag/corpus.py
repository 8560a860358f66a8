"""Corpus loading and chunking.

Documents arrive as pre-extracted text (JSONL records or a directory of
.txt/.md files) and are split into overlapping chunks of at most
``max_chars`` characters, preferring breaks at paragraph, line, sentence,
and word boundaries, in that order. Character counts are Unicode code
points, never bytes, so a boundary can never split a scalar value.

Every chunk records its ``[start, end)`` span into the document body and is
an exact substring of it, which keeps provenance auditable and makes the
coverage invariant testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DuplicateIdError, InputError, MalformedRecordError

DEFAULT_SEPARATORS = ("\n\n", "\n", ". ", " ", "")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str = ""
    source: str = ""
    publication_date: str | None = None
    topics: tuple[str, ...] = ()
    body: str = ""
    relevance_score: float | None = None

    def __post_init__(self):
        if not self.doc_id:
            raise InputError("doc_id must be non-empty")


@dataclass(frozen=True)
class ChunkConfig:
    max_chars: int = 800
    overlap_chars: int = 80
    separator_hierarchy: tuple[str, ...] = DEFAULT_SEPARATORS

    def __post_init__(self):
        if self.max_chars <= 0:
            raise InputError("max_chars must be positive")
        if self.overlap_chars < 0:
            raise InputError("overlap_chars must be non-negative")
        if self.overlap_chars >= self.max_chars:
            raise InputError("overlap_chars must be smaller than max_chars")
        if not self.separator_hierarchy or self.separator_hierarchy[-1] != "":
            raise InputError(
                "separator_hierarchy must end with the empty string fallback"
            )


@dataclass(frozen=True)
class ChunkMetadata:
    source: str = ""
    title: str = ""
    publication_date: str | None = None
    topics: tuple[str, ...] = ()
    relevance_score: float | None = None

    @classmethod
    def from_document(cls, doc: Document) -> "ChunkMetadata":
        return cls(
            source=doc.source,
            title=doc.title,
            publication_date=doc.publication_date,
            topics=tuple(doc.topics),
            relevance_score=doc.relevance_score,
        )


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    char_span: tuple[int, int]
    metadata: ChunkMetadata = field(default_factory=ChunkMetadata)


def chunk_id_for(doc_id: str, ordinal: int) -> str:
    # Zero-padded so lexicographic chunk_id order matches ordinal order
    # within a document; ties everywhere are broken by ascending chunk_id.
    return f"{doc_id}#{ordinal:04d}"


def _normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


# --- loading -----------------------------------------------------------------

_REQUIRED_KEYS = ("doc_id", "body")


def _document_from_record(record: dict, line_number: int) -> Document:
    if not isinstance(record, dict):
        raise MalformedRecordError(
            f"line {line_number}: expected a JSON object", line_number
        )
    for key in _REQUIRED_KEYS:
        if key not in record:
            raise MalformedRecordError(
                f"line {line_number}: missing required key {key!r}", line_number
            )
    doc_id = record["doc_id"]
    body = record["body"]
    if not isinstance(doc_id, str) or not doc_id:
        raise MalformedRecordError(
            f"line {line_number}: doc_id must be a non-empty string", line_number
        )
    if not isinstance(body, str):
        raise MalformedRecordError(
            f"line {line_number}: body must be a string", line_number
        )
    topics = record.get("topics") or []
    if not isinstance(topics, list) or any(not isinstance(t, str) for t in topics):
        raise MalformedRecordError(
            f"line {line_number}: topics must be a list of strings", line_number
        )
    publication_date = record.get("publication_date")
    if publication_date is not None and not isinstance(publication_date, str):
        raise MalformedRecordError(
            f"line {line_number}: publication_date must be a string or null",
            line_number,
        )
    relevance = record.get("relevance_score")
    if relevance is not None and not isinstance(relevance, (int, float)):
        raise MalformedRecordError(
            f"line {line_number}: relevance_score must be numeric", line_number
        )
    return Document(
        doc_id=doc_id,
        title=str(record.get("title") or ""),
        source=str(record.get("source") or ""),
        publication_date=publication_date,
        topics=tuple(topics),
        body=_normalize_newlines(body),
        relevance_score=float(relevance) if relevance is not None else None,
    )


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Document]:
    """Load a corpus from a JSONL file or a directory of text files.

    Documents come back sorted by doc_id so ingestion order is deterministic
    regardless of filesystem enumeration order.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus path does not exist: {path}")
    if format == "jsonl":
        docs = _load_jsonl(path)
    elif format == "text_dir":
        docs = _load_text_dir(path)
    else:
        raise InputError(f"unknown corpus format: {format!r}")
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise DuplicateIdError(doc.doc_id, f"duplicate doc_id: {doc.doc_id!r}")
        seen.add(doc.doc_id)
    return sorted(docs, key=lambda d: d.doc_id)


def _load_jsonl(path: Path) -> list[Document]:
    if path.is_dir():
        raise InputError(f"jsonl format expects a file, got directory: {path}")
    docs = []
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(
                    f"line {line_number}: invalid JSON: {exc.msg}", line_number
                ) from exc
            docs.append(_document_from_record(record, line_number))
    return docs


def _load_text_dir(path: Path) -> list[Document]:
    if not path.is_dir():
        raise InputError(f"text_dir format expects a directory, got file: {path}")
    docs = []
    for file in sorted(path.iterdir()):
        if file.suffix.lower() not in (".txt", ".md"):
            continue
        body = _normalize_newlines(file.read_text(encoding="utf-8"))
        docs.append(Document(doc_id=file.stem, title=file.stem, body=body))
    return docs


# --- chunking ----------------------------------------------------------------


def split_into_chunks(doc: Document, cfg: ChunkConfig | None = None) -> list[Chunk]:
    """Split a document body into overlapping, boundary-aware chunks.

    The splitter walks the body left to right. Whenever the remaining text
    exceeds ``max_chars`` it breaks at the latest occurrence of the highest-
    priority separator that fits inside the window (the separator stays with
    the preceding chunk); with no separator available it cuts at exactly
    ``max_chars``. The next chunk then starts ``overlap_chars`` before the
    previous end, unless a separator inside that overlap window offers a
    cleaner boundary, in which case the separator wins.

    Separator-free bodies therefore degrade to fixed windows with step
    ``max_chars - overlap_chars``. Whitespace-only fragments are dropped.
    """
    cfg = cfg or ChunkConfig()
    body = doc.body
    spans = _split_spans(body, cfg)
    metadata = ChunkMetadata.from_document(doc)
    chunks = []
    ordinal = 0
    for start, end in spans:
        piece = body[start:end]
        if not piece.strip():
            continue
        chunks.append(
            Chunk(
                chunk_id=chunk_id_for(doc.doc_id, ordinal),
                doc_id=doc.doc_id,
                ordinal=ordinal,
                text=piece,
                char_span=(start, end),
                metadata=metadata,
            )
        )
        ordinal += 1
    return chunks


def _split_spans(body: str, cfg: ChunkConfig) -> list[tuple[int, int]]:
    n = len(body)
    if n == 0:
        return []
    max_chars = cfg.max_chars
    overlap = cfg.overlap_chars
    separators = cfg.separator_hierarchy
    spans: list[tuple[int, int]] = []
    start = 0
    while start < n:
        if n - start <= max_chars:
            spans.append((start, n))
            break
        end = _break_point(body, start, start + max_chars, separators)
        spans.append((start, end))
        if end >= n:
            break
        start = _next_start(body, start, end, overlap, separators)
    return spans


def _break_point(
    body: str, start: int, window_end: int, separators: tuple[str, ...]
) -> int:
    """Latest separator-aligned end position in (start, window_end]."""
    for sep in separators:
        if sep == "":
            return window_end
        idx = body.rfind(sep, start, window_end)
        if idx != -1 and idx + len(sep) > start:
            return idx + len(sep)
    return window_end


def _next_start(
    body: str,
    prev_start: int,
    prev_end: int,
    overlap: int,
    separators: tuple[str, ...],
) -> int:
    """Start of the chunk after one ending at prev_end.

    Defaults to an exact ``overlap`` tail of the previous chunk, clamped so
    the scan always advances. A separator boundary strictly inside that tail
    wins over the exact offset (the earliest one, to retain as much overlap
    as possible), and leading whitespace is skipped so chunks never open
    mid-separator.
    """
    prev_len = prev_end - prev_start
    base = prev_end - min(overlap, prev_len)
    if base <= prev_start:
        base = prev_start + 1
    pos = base
    for sep in separators:
        if sep == "":
            continue
        idx = body.find(sep, max(0, base - len(sep)), prev_end - 1)
        if idx != -1:
            candidate = idx + len(sep)
            if base <= candidate < prev_end and candidate > prev_start:
                pos = candidate
                break
    while pos < prev_end and body[pos].isspace():
        pos += 1
    return pos


def attach_metadata(chunk: Chunk, doc: Document) -> Chunk:
    """Return the chunk carrying a copy of the document's metadata fields."""
    if chunk.doc_id != doc.doc_id:
        raise InputError(
            f"doc_id mismatch: chunk belongs to {chunk.doc_id!r}, got {doc.doc_id!r}"
        )
    return replace(chunk, metadata=ChunkMetadata.from_document(doc))
