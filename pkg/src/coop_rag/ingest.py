"""Corpus-to-index pipeline shared by the CLI and the HTTP service."""

from __future__ import annotations

from pathlib import Path

from .corpus import ChunkConfig, load_corpus, split_into_chunks
from .embedding import EmbedderSpec, make_embedder
from .index import KnowledgeIndex


def build_index_from_corpus(
    corpus_path: str | Path,
    corpus_format: str = "jsonl",
    chunk_cfg: ChunkConfig | None = None,
    embedder_spec: EmbedderSpec | None = None,
    embedder=None,
) -> tuple[KnowledgeIndex, int, int]:
    """Load, chunk, embed, and index a corpus.

    Returns (index, document count, chunk count). Callers may pass a
    constructed ``embedder`` (e.g. one with a custom transport); otherwise
    one is built from ``embedder_spec``.
    """
    chunk_cfg = chunk_cfg or ChunkConfig()
    embedder_spec = embedder_spec or EmbedderSpec()
    if embedder is None:
        embedder = make_embedder(embedder_spec)
    documents = load_corpus(corpus_path, format=corpus_format)
    index = KnowledgeIndex(
        dims=embedder_spec.dims, embedder_fingerprint=embedder_spec.fingerprint
    )
    total_chunks = 0
    for doc in documents:
        chunks = split_into_chunks(doc, chunk_cfg)
        if not chunks:
            continue
        vectors = embedder.embed_batch([chunk.text for chunk in chunks])
        index.upsert_chunks(chunks, vectors)
        total_chunks += len(chunks)
    return index, len(documents), total_chunks
