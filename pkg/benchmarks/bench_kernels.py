"""Benchmark the compiled scoring kernels against the numpy fallback.

Run from the repository root after an editable install:

    python benchmarks/bench_kernels.py [--chunks 10000] [--dims 1536]

Times the three hot kernels (dense scan, BM25 accumulation, greedy MMR)
and a full retrieve() call on each available backend.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from coop_rag import kernels
from coop_rag.corpus import Chunk, ChunkMetadata
from coop_rag.index import KnowledgeIndex
from coop_rag.retrieval import RetrievalConfig, retrieve


class BenchQuery:
    def __init__(self, embedding, tokens):
        self.embedding = embedding
        self.normalized_tokens = tokens
        self.keywords = []


def build_problem(n_chunks: int, dims: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    vocabulary = [f"term{i:03d}" for i in range(400)]
    matrix = rng.normal(size=(n_chunks, dims))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    matrix = matrix.astype(np.float32)
    index = KnowledgeIndex(dims=dims)
    chunks = []
    for i in range(n_chunks):
        words = rng.choice(vocabulary, size=int(rng.integers(20, 60)))
        chunks.append(
            Chunk(
                chunk_id=f"c{i:05d}#0000",
                doc_id=f"c{i:05d}",
                ordinal=0,
                text=" ".join(words),
                char_span=(0, 1),
                metadata=ChunkMetadata(source="bench", title="bench"),
            )
        )
    index.upsert_chunks(chunks, list(matrix))
    queries = []
    for _ in range(50):
        vec = rng.normal(size=dims)
        vec = (vec / np.linalg.norm(vec)).astype(np.float32)
        tokens = list(rng.choice(vocabulary, size=5))
        queries.append(BenchQuery(vec, tokens))
    return index, matrix, queries, vocabulary, rng


def time_it(fn, repeats: int = 30) -> tuple[float, float]:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000)
    return statistics.median(samples), max(samples)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--chunks", type=int, default=10_000)
    parser.add_argument("--dims", type=int, default=1536)
    args = parser.parse_args()

    index, matrix, queries, vocabulary, rng = build_problem(args.chunks, args.dims)
    q_vec = queries[0].embedding
    mmr_scores = rng.uniform(0, 1, 100)
    mmr_vectors = matrix[:100]

    backends = kernels.available_backends()
    print(f"backends: {backends} (active: {kernels.ACTIVE_BACKEND})")
    print(f"problem: {args.chunks} chunks x {args.dims} dims")
    header = f"{'kernel':<18}" + "".join(f"{b:>18}" for b in backends)
    print(header)
    print("-" * len(header))

    rows = {
        "dot_scan": lambda impl: impl.dot_scan(matrix, q_vec),
        "mmr_select(100,6)": lambda impl: impl.mmr_select(
            mmr_scores, mmr_vectors, 6, 0.3
        ),
    }
    for name, runner in rows.items():
        cells = []
        for backend in backends:
            impl = kernels.get_backend(backend)
            median, worst = time_it(lambda: runner(impl))
            cells.append(f"{median:8.2f}ms ({worst:6.2f})")
        print(f"{name:<18}" + "".join(f"{c:>18}" for c in cells))

    # bm25 via the index path (kernel selected by env at import, so report
    # only the active backend here)
    tokens = list(rng.choice(vocabulary, size=5))
    median, worst = time_it(lambda: index.lexical_scores(tokens))
    print(f"{'bm25 (active)':<18}{median:>10.2f}ms ({worst:6.2f})")

    cfg = RetrievalConfig()
    samples = []
    for query in queries:
        start = time.perf_counter()
        retrieve(query, index, cfg)
        samples.append((time.perf_counter() - start) * 1000)
    print(
        f"{'retrieve (active)':<18}{statistics.median(samples):>10.2f}ms "
        f"(p95 {sorted(samples)[int(0.95 * len(samples))]:.2f}, "
        f"max {max(samples):.2f})"
    )
    print(
        "note: set COOP_RAG_KERNELS=fallback|native and re-run to compare "
        "the composite paths"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
