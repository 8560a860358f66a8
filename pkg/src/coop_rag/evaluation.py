"""Benchmark harness: ground-truth suites, similarity metrics, reports.

Each ground-truth question runs through the full chat pipeline in a fresh
single-turn session. Three metrics are recorded per query: semantic
similarity of the answer to the expert answer, retrieval precision (mean
cosine of the query embedding against the retrieved chunk embeddings), and
handler latency. Optional no-retrieval baseline fields re-ask the same
generation backend without any contexts, isolating what retrieval
contributes.

Failed records are excluded from the means but reported with a failure
count; the run continues. With deterministic backends (hash embedder,
extractive stub, fixed clock) the whole report is byte-reproducible.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    BackendError,
    CoopRagError,
    DuplicateIdError,
    EmptyTextError,
    MalformedRecordError,
)
from .embedding import cosine_similarity
from .orchestrator import ChatDeps, SessionStore, assemble_prompt, handle_chat

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

DEFAULT_BIN_WIDTH = 0.05
DEFAULT_HIST_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class GroundTruthRecord:
    id: str
    question: str
    expected_answer: str
    tags: tuple[str, ...] = ()


@dataclass
class QueryEvaluation:
    id: str
    generated_answer: str = ""
    semantic_similarity: float = 0.0
    retrieval_precision: float = 0.0
    latency_ms: int = 0
    contexts_count: int = 0
    ood: bool = False
    baseline_answer: str | None = None
    baseline_similarity: float | None = None
    failed: bool = False
    error: str | None = None


@dataclass
class AggregateMetrics:
    n: int
    failed: int
    mean_semantic_similarity: float
    mean_retrieval_precision: float
    mean_latency_s: float
    mean_contexts: float
    histogram: list[tuple[float, int]]
    baseline_mean_similarity: float | None = None


@dataclass
class BenchmarkOptions:
    with_baseline: bool = False
    parallelism: int = 1
    bin_width: float = DEFAULT_BIN_WIDTH
    hist_range: tuple[float, float] = DEFAULT_HIST_RANGE


def load_ground_truth(path: str | Path) -> list[GroundTruthRecord]:
    path = Path(path)
    records: list[GroundTruthRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(
                    f"line {line_number}: invalid JSON: {exc.msg}", line_number
                ) from exc
            if not isinstance(raw, dict):
                raise MalformedRecordError(
                    f"line {line_number}: expected a JSON object", line_number
                )
            for key in ("id", "question", "expected_answer"):
                value = raw.get(key)
                if not isinstance(value, str) or not value.strip():
                    raise MalformedRecordError(
                        f"line {line_number}: {key!r} must be a non-empty string",
                        line_number,
                    )
            tags = raw.get("tags") or []
            if not isinstance(tags, list) or any(
                not isinstance(t, str) for t in tags
            ):
                raise MalformedRecordError(
                    f"line {line_number}: tags must be a list of strings",
                    line_number,
                )
            if raw["id"] in seen:
                raise DuplicateIdError(raw["id"])
            seen.add(raw["id"])
            records.append(
                GroundTruthRecord(
                    id=raw["id"],
                    question=raw["question"],
                    expected_answer=raw["expected_answer"],
                    tags=tuple(tags),
                )
            )
    return records


def semantic_similarity(generated: str, expected: str, embedder) -> float:
    if not generated.strip() or not expected.strip():
        raise EmptyTextError("semantic similarity requires non-empty texts")
    return cosine_similarity(
        embedder.embed_text(generated), embedder.embed_text(expected)
    )


def retrieval_precision(query_embedding, retrieved_vectors) -> float:
    """Mean cosine of the query against its retrieved chunks; 0.0 if none."""
    if len(retrieved_vectors) == 0:
        logger.warning("retrieval precision over empty retrieval; reporting 0.0")
        return 0.0
    return float(
        np.mean(
            [cosine_similarity(query_embedding, vec) for vec in retrieved_vectors]
        )
    )


def histogram(
    values: list[float],
    bin_width: float = DEFAULT_BIN_WIDTH,
    hist_range: tuple[float, float] = DEFAULT_HIST_RANGE,
) -> list[tuple[float, int]]:
    """Left-closed right-open bins over [lo, hi); outliers clamp to end bins."""
    lo, hi = hist_range
    if bin_width <= 0:
        raise MalformedRecordError("bin_width must be positive")
    if hi <= lo:
        raise MalformedRecordError("histogram range must satisfy hi > lo")
    bin_count = max(1, math.ceil((hi - lo) / bin_width - 1e-9))
    counts = [0] * bin_count
    for value in values:
        idx = math.floor((value - lo) / bin_width)
        # Float division can land a boundary value one bin off; nudge it
        # onto the half-open convention against the computed edges.
        if idx + 1 < bin_count and value >= lo + (idx + 1) * bin_width:
            idx += 1
        elif idx > 0 and value < lo + idx * bin_width:
            idx -= 1
        counts[min(max(idx, 0), bin_count - 1)] += 1
    return [(lo + i * bin_width, counts[i]) for i in range(bin_count)]


def _evaluate_one(
    record: GroundTruthRecord, deps: ChatDeps, options: BenchmarkOptions
) -> QueryEvaluation:
    try:
        outcome = handle_chat(None, record.question, None, deps)
        answer = outcome.answer
        similarity = semantic_similarity(
            answer.text, record.expected_answer, deps.embedder
        )
        if outcome.retrieval is not None and outcome.retrieval.contexts:
            vectors = [
                deps.index.get_vector(ref)
                for ref in outcome.retrieval.chunk_refs()
            ]
            precision = retrieval_precision(outcome.prepared.embedding, vectors)
        else:
            precision = retrieval_precision(outcome.prepared.embedding, [])
        evaluation = QueryEvaluation(
            id=record.id,
            generated_answer=answer.text,
            semantic_similarity=similarity,
            retrieval_precision=precision,
            latency_ms=answer.latency_ms,
            contexts_count=len(answer.contexts_used),
            ood=answer.ood,
        )
        if options.with_baseline:
            bundle = assemble_prompt([], [], record.question, style="concise")
            baseline_text = deps.generation_backend.generate(bundle)
            evaluation.baseline_answer = baseline_text
            evaluation.baseline_similarity = semantic_similarity(
                baseline_text, record.expected_answer, deps.embedder
            )
        return evaluation
    except (BackendError, CoopRagError) as exc:
        logger.warning("record %s failed: %s", record.id, exc)
        return QueryEvaluation(id=record.id, failed=True, error=str(exc))


def run_benchmark(
    records: list[GroundTruthRecord],
    deps: ChatDeps,
    options: BenchmarkOptions | None = None,
) -> tuple[list[QueryEvaluation], AggregateMetrics]:
    options = options or BenchmarkOptions()
    # Fresh single-turn sessions, never persisted into the caller's store.
    deps = replace(deps, session_store=SessionStore())
    if options.parallelism > 1:
        with ThreadPoolExecutor(max_workers=options.parallelism) as pool:
            evaluations = list(
                pool.map(lambda r: _evaluate_one(r, deps, options), records)
            )
    else:
        evaluations = [_evaluate_one(r, deps, options) for r in records]
    return evaluations, aggregate(evaluations, options)


def aggregate(
    evaluations: list[QueryEvaluation], options: BenchmarkOptions | None = None
) -> AggregateMetrics:
    options = options or BenchmarkOptions()
    ok = [e for e in evaluations if not e.failed]
    failed = len(evaluations) - len(ok)

    def mean(values: list[float]) -> float:
        return float(np.mean(values)) if values else 0.0

    similarities = [e.semantic_similarity for e in ok]
    baseline_values = [
        e.baseline_similarity for e in ok if e.baseline_similarity is not None
    ]
    return AggregateMetrics(
        n=len(ok),
        failed=failed,
        mean_semantic_similarity=mean(similarities),
        mean_retrieval_precision=mean([e.retrieval_precision for e in ok]),
        mean_latency_s=mean([e.latency_ms / 1000.0 for e in ok]),
        mean_contexts=mean([float(e.contexts_count) for e in ok]),
        histogram=histogram(similarities, options.bin_width, options.hist_range),
        baseline_mean_similarity=mean(baseline_values) if baseline_values else None,
    )


# --- report files ---------------------------------------------------------------


def _evaluation_to_record(evaluation: QueryEvaluation) -> dict:
    record = {
        "id": evaluation.id,
        "generated_answer": evaluation.generated_answer,
        "semantic_similarity": evaluation.semantic_similarity,
        "retrieval_precision": evaluation.retrieval_precision,
        "latency_ms": evaluation.latency_ms,
        "contexts_count": evaluation.contexts_count,
        "ood": evaluation.ood,
        "failed": evaluation.failed,
    }
    if evaluation.error is not None:
        record["error"] = evaluation.error
    if evaluation.baseline_similarity is not None:
        record["baseline_answer"] = evaluation.baseline_answer
        record["baseline_similarity"] = evaluation.baseline_similarity
    return record


def aggregates_to_dict(aggregates: AggregateMetrics) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n": aggregates.n,
        "failed": aggregates.failed,
        "mean_semantic_similarity": aggregates.mean_semantic_similarity,
        "mean_retrieval_precision": aggregates.mean_retrieval_precision,
        "mean_latency_s": aggregates.mean_latency_s,
        "mean_contexts": aggregates.mean_contexts,
        "baseline_mean_similarity": aggregates.baseline_mean_similarity,
        "histogram": [[lower, count] for lower, count in aggregates.histogram],
    }


def aggregates_from_dict(data: dict) -> AggregateMetrics:
    return AggregateMetrics(
        n=data["n"],
        failed=data.get("failed", 0),
        mean_semantic_similarity=data["mean_semantic_similarity"],
        mean_retrieval_precision=data["mean_retrieval_precision"],
        mean_latency_s=data["mean_latency_s"],
        mean_contexts=data["mean_contexts"],
        histogram=[(lower, count) for lower, count in data["histogram"]],
        baseline_mean_similarity=data.get("baseline_mean_similarity"),
    )


def write_report(
    evaluations: list[QueryEvaluation],
    aggregates: AggregateMetrics,
    path: str | Path,
) -> dict[str, Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    per_query = path / "per_query.jsonl"
    with per_query.open("w", encoding="utf-8") as fh:
        for evaluation in evaluations:
            fh.write(
                json.dumps(
                    _evaluation_to_record(evaluation),
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    aggregates_path = path / "aggregates.json"
    aggregates_path.write_text(
        json.dumps(aggregates_to_dict(aggregates), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    histogram_path = path / "histogram.csv"
    lines = ["bin_lower,count"]
    lines += [f"{lower},{count}" for lower, count in aggregates.histogram]
    histogram_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {
        "per_query": per_query,
        "aggregates": aggregates_path,
        "histogram": histogram_path,
    }
