"""Hybrid retrieval: score fusion, keyword boosting, MMR re-ranking.

The pipeline over an index snapshot:

1. dense scan and BM25 scan, top ``pool_size`` each
2. union the two candidate pools; members missing from one side get their
   semantic score from the same dense scan and a raw lexical score of 0
3. min-max normalize the lexical scores of the BM25 hits
4. fuse: ``alpha * max(semantic, 0) + (1 - alpha) * lexical_norm``
5. additive keyword boost, capped
6. greedy MMR selection of ``k`` diverse contexts, penalty weight ``lambda``

Every stage keeps its intermediate value on the candidate ledger so callers
(and the chat API) can audit how a chunk earned its rank. Defaults:
alpha 0.70, k 6.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .corpus import Chunk
from .errors import EmptyIndexError, InputError
from .index import KnowledgeIndex, ScoredHit

DEFAULT_ALPHA = 0.70
DEFAULT_K = 6
DEFAULT_LAMBDA = 0.3
DEFAULT_POOL_SIZE = 50
DEFAULT_BOOST_PER_KEYWORD = 0.05
DEFAULT_BOOST_CAP = 0.15


@dataclass(frozen=True)
class RetrievalConfig:
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_K
    mmr_lambda: float = DEFAULT_LAMBDA
    pool_size: int = DEFAULT_POOL_SIZE
    boost_per_keyword: float = DEFAULT_BOOST_PER_KEYWORD
    boost_cap: float = DEFAULT_BOOST_CAP

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError("alpha must be in [0, 1]")
        if not 0.0 <= self.mmr_lambda <= 1.0:
            raise InputError("lambda must be in [0, 1]")
        if self.k <= 0:
            raise InputError("k must be positive")
        if self.pool_size <= 0:
            raise InputError("pool_size must be positive")
        if self.boost_per_keyword < 0 or self.boost_cap < 0:
            raise InputError("boost settings must be non-negative")


@dataclass
class RetrievalCandidate:
    chunk_ref: str
    semantic_sim: float
    lexical_raw: float
    lexical_norm: float
    fused: float
    boosted: float
    mmr_final: float | None = None
    selected_rank: int | None = None


@dataclass
class PoolStats:
    pool_size_actual: int
    mean_semantic_sim: float
    mean_fused: float


@dataclass
class RetrievalResult:
    contexts: list[tuple[Chunk, RetrievalCandidate]] = field(default_factory=list)
    pool_stats: PoolStats = field(
        default_factory=lambda: PoolStats(0, 0.0, 0.0)
    )

    def chunk_refs(self) -> list[str]:
        return [chunk.chunk_id for chunk, _ in self.contexts]


def normalize_lexical(hits: list[ScoredHit]) -> dict[str, float]:
    """Min-max normalize lexical hit scores into [0, 1].

    Degenerate pools (all scores equal) map to 0.5; chunks absent from the
    hit list are treated as 0.0 by lookup convention (``.get(ref, 0.0)``).
    """
    if not hits:
        return {}
    scores = [hit.score for hit in hits]
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return {hit.chunk_ref: 0.5 for hit in hits}
    span = hi - lo
    return {hit.chunk_ref: (hit.score - lo) / span for hit in hits}


def fuse_scores(semantic_sim: float, lexical_norm: float, alpha: float) -> float:
    """Convex combination of the two relevance signals.

    Negative cosine values clamp to 0 first so the fused score stays in
    [0, 1] alongside the normalized BM25 signal.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must be in [0, 1]")
    if not 0.0 <= lexical_norm <= 1.0:
        raise InputError("lexical_norm must be in [0, 1]")
    return alpha * max(semantic_sim, 0.0) + (1.0 - alpha) * lexical_norm


def count_keyword_matches(
    chunk: Chunk, query_keywords: list[str]
) -> int:
    """Distinct query keywords present (whole-token, case-insensitive) in the
    chunk text or its topic metadata."""
    if not query_keywords:
        return 0
    from .text import tokenize

    haystack = set(tokenize(chunk.text))
    for topic in chunk.metadata.topics:
        haystack.update(tokenize(topic))
    return len({kw.lower() for kw in query_keywords} & haystack)


def keyword_boost(
    candidate: RetrievalCandidate,
    chunk: Chunk,
    query_keywords: list[str],
    cfg: RetrievalConfig,
) -> RetrievalCandidate:
    matches = count_keyword_matches(chunk, query_keywords)
    boosted = min(
        candidate.fused + cfg.boost_per_keyword * matches,
        candidate.fused + cfg.boost_cap,
    )
    return replace(candidate, boosted=min(boosted, 1.0))


def mmr_select(
    candidates: list[tuple[str, float, np.ndarray]],
    k: int,
    lam: float,
) -> list[tuple[str, float]]:
    """Greedy diverse selection over (chunk_ref, boosted_score, vector).

    Returns the picks in selection order with the marginal score each one
    had when chosen. Ties break by ascending chunk_ref; the similarity
    penalty against an empty selection is 0, so the first pick is always
    the plain argmax of the boosted scores.
    """
    if not 0.0 <= lam <= 1.0:
        raise InputError("lambda must be in [0, 1]")
    if k <= 0:
        raise InputError("k must be positive")
    if not candidates:
        return []
    ordered = sorted(candidates, key=lambda c: c[0])
    dims = {np.asarray(vec).shape[-1] for _, _, vec in ordered}
    if len(dims) > 1:
        raise InputError(f"candidate vectors disagree on dims: {sorted(dims)}")
    scores = np.asarray([score for _, score, _ in ordered], dtype=np.float64)
    vectors = np.ascontiguousarray(
        [np.asarray(vec, dtype=np.float32) for _, _, vec in ordered],
        dtype=np.float32,
    )
    order, finals = kernels.mmr_select(scores, vectors, k, lam)
    return [(ordered[i][0], float(final)) for i, final in zip(order, finals)]


def score_pool(
    query_embedding: np.ndarray,
    query_tokens: list[str],
    query_keywords: list[str],
    index: KnowledgeIndex,
    cfg: RetrievalConfig,
) -> list[RetrievalCandidate]:
    """Stages 1-5: build the fused, boosted candidate pool (no MMR yet)."""
    if len(index) == 0:
        raise EmptyIndexError("retrieve requires a non-empty index")
    semantic = index.semantic_scores(query_embedding)
    sem_hits = index.vector_search(query_embedding, cfg.pool_size, scores=semantic)
    lex_hits = index.lexical_search(query_tokens, cfg.pool_size)
    lex_norm = normalize_lexical(lex_hits)
    lex_raw = {hit.chunk_ref: hit.score for hit in lex_hits}

    pool_refs = sorted(
        {hit.chunk_ref for hit in sem_hits} | {hit.chunk_ref for hit in lex_hits}
    )
    candidates = []
    for ref in pool_refs:
        row = index.row_index(ref)
        sem = float(semantic[row])
        norm = lex_norm.get(ref, 0.0)
        fused = fuse_scores(sem, norm, cfg.alpha)
        candidate = RetrievalCandidate(
            chunk_ref=ref,
            semantic_sim=sem,
            lexical_raw=lex_raw.get(ref, 0.0),
            lexical_norm=norm,
            fused=fused,
            boosted=fused,
        )
        candidates.append(
            keyword_boost(candidate, index.get_chunk(ref), query_keywords, cfg)
        )
    return candidates


def retrieve(query, index: KnowledgeIndex, cfg: RetrievalConfig) -> RetrievalResult:
    """Full pipeline over a prepared query.

    ``query`` needs ``embedding``, ``normalized_tokens``, and ``keywords``
    (list of (token, facet) pairs) attributes; see
    ``coop_rag.query.PreparedQuery``.
    """
    keywords = [token for token, _facet in getattr(query, "keywords", [])]
    candidates = score_pool(
        query.embedding, query.normalized_tokens, keywords, index, cfg
    )
    by_ref = {c.chunk_ref: c for c in candidates}
    picked = mmr_select(
        [(c.chunk_ref, c.boosted, index.get_vector(c.chunk_ref)) for c in candidates],
        cfg.k,
        cfg.mmr_lambda,
    )
    contexts = []
    for rank, (ref, final) in enumerate(picked):
        candidate = replace(by_ref[ref], mmr_final=final, selected_rank=rank)
        contexts.append((index.get_chunk(ref), candidate))
    stats = PoolStats(
        pool_size_actual=len(candidates),
        mean_semantic_sim=float(
            np.mean([c.semantic_sim for c in candidates]) if candidates else 0.0
        ),
        mean_fused=float(
            np.mean([c.fused for c in candidates]) if candidates else 0.0
        ),
    )
    return RetrievalResult(contexts=contexts, pool_stats=stats)


def best_fused_score(
    query_embedding: np.ndarray,
    query_tokens: list[str],
    query_keywords: list[str],
    index: KnowledgeIndex,
    cfg: RetrievalConfig,
) -> float:
    """Best fused (pre-boost) score in the pool; 0.0 on an empty index.

    Used by the query pipeline's out-of-domain preview without paying for
    the MMR stage.
    """
    if len(index) == 0:
        return 0.0
    candidates = score_pool(
        query_embedding, query_tokens, query_keywords, index, cfg
    )
    return max((c.fused for c in candidates), default=0.0)
