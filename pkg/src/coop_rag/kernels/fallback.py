"""NumPy implementations of the scoring kernels.

Selected at import time when the compiled extension is unavailable (see
``coop_rag.kernels``). Semantics match ``_native.pyx``; floating-point
results may differ from the native kernels in the last few ulps because
BLAS reorders accumulation, but each backend is internally deterministic.
"""

import numpy as np

BACKEND_NAME = "fallback"


def dot_scan(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Dot product of every row of ``matrix`` (n, d) float32 with ``query``.

    Returns float64 scores; for unit-norm rows this is the cosine scan.
    """
    if matrix.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    return (matrix @ query.astype(np.float32)).astype(np.float64)


def bm25_accumulate(
    n: int,
    rows: np.ndarray,
    tfs: np.ndarray,
    idfs: np.ndarray,
    k1norm: np.ndarray,
    k1: float,
) -> np.ndarray:
    """Accumulate BM25 contributions into a dense score vector.

    ``rows``/``tfs``/``idfs`` are parallel per-posting-entry arrays
    (one entry per (query term occurrence, chunk) pair); ``k1norm`` holds
    ``k1 * (1 - b + b * len/avg_len)`` per chunk row.
    """
    scores = np.zeros(n, dtype=np.float64)
    if len(rows) == 0:
        return scores
    contrib = idfs * tfs * (k1 + 1.0) / (tfs + k1norm[rows])
    np.add.at(scores, rows, contrib)
    return scores


def mmr_select(
    scores: np.ndarray, vectors: np.ndarray, k: int, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy maximal-marginal-relevance selection.

    Each round picks the unselected candidate maximizing
    ``score[i] - lam * max(sim(i, j) for j selected)`` where sim is the dot
    product of the (unit-norm) candidate vectors and the max over an empty
    selection is 0. Ties go to the lowest index. Returns (selection order,
    final score at selection time), both length ``min(k, n)``.
    """
    n = len(scores)
    take = min(k, n)
    order = np.empty(take, dtype=np.int64)
    finals = np.empty(take, dtype=np.float64)
    if take == 0:
        return order, finals
    max_sim = np.zeros(n, dtype=np.float64)
    selected = np.zeros(n, dtype=bool)
    # Pools are small (bounded by retrieval pool_size), so the similarity
    # matvec runs in float64 to match the native kernel's accumulation.
    vectors64 = np.asarray(vectors, dtype=np.float64)
    for round_idx in range(take):
        mmr = scores - lam * max_sim
        mmr[selected] = -np.inf
        pick = int(np.argmax(mmr))
        order[round_idx] = pick
        finals[round_idx] = mmr[pick]
        selected[pick] = True
        if round_idx + 1 < take:
            sims = vectors64 @ vectors64[pick]
            np.maximum(max_sim, sims, out=max_sim)
    return order, finals
