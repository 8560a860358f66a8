import json

import numpy as np
import pytest

from coop_rag.errors import (
    DuplicateIdError,
    EmptyTextError,
    MalformedRecordError,
)
from coop_rag.evaluation import (
    AggregateMetrics,
    BenchmarkOptions,
    GroundTruthRecord,
    aggregate,
    aggregates_from_dict,
    aggregates_to_dict,
    histogram,
    load_ground_truth,
    retrieval_precision,
    run_benchmark,
    semantic_similarity,
    write_report,
)
from coop_rag.orchestrator import ChatDeps, ExtractiveStubBackend, SessionStore
from coop_rag.retrieval import RetrievalConfig


@pytest.fixture
def eval_deps(synthetic_index, lexicon, embedder):
    return ChatDeps(
        index=synthetic_index,
        lexicon=lexicon,
        embedder=embedder,
        generation_backend=ExtractiveStubBackend(),
        session_store=SessionStore(),
        retrieval_cfg=RetrievalConfig(),
        clock=lambda: 0.0,
    )


@pytest.fixture
def gt_records(ground_truth_records):
    return [
        GroundTruthRecord(
            id=r["id"],
            question=r["question"],
            expected_answer=r["expected_answer"],
            tags=tuple(r.get("tags", [])),
        )
        for r in ground_truth_records
    ]


# --- ground truth loading ---------------------------------------------------


def test_load_ground_truth_counts(tmp_path, ground_truth_records):
    path = tmp_path / "gt.jsonl"
    with path.open("w") as fh:
        for record in ground_truth_records:
            fh.write(json.dumps(record) + "\n")
    records = load_ground_truth(path)
    assert len(records) == 30
    assert records[0].id == "q001"


def test_load_ground_truth_empty_file(tmp_path):
    path = tmp_path / "gt.jsonl"
    path.write_text("")
    assert load_ground_truth(path) == []


def test_load_ground_truth_missing_field(tmp_path):
    path = tmp_path / "gt.jsonl"
    path.write_text(
        json.dumps({"id": "a", "question": "q", "expected_answer": "x"})
        + "\n"
        + json.dumps({"id": "b", "question": "q"})
        + "\n"
    )
    with pytest.raises(MalformedRecordError) as excinfo:
        load_ground_truth(path)
    assert excinfo.value.line_number == 2


def test_load_ground_truth_duplicate_id(tmp_path):
    path = tmp_path / "gt.jsonl"
    row = json.dumps({"id": "a", "question": "q", "expected_answer": "x"})
    path.write_text(row + "\n" + row + "\n")
    with pytest.raises(DuplicateIdError):
        load_ground_truth(path)


# --- semantic similarity -------------------------------------------------------


def test_identical_strings_similarity_one(embedder):
    text = "Turkeys purr when content."
    assert semantic_similarity(text, text, embedder) == pytest.approx(1.0, abs=1e-6)


def test_similarity_symmetric(embedder):
    a = "Broilers need fresh water daily."
    b = "Daily fresh water matters for broilers."
    assert semantic_similarity(a, b, embedder) == semantic_similarity(b, a, embedder)


def test_similarity_rejects_empty(embedder):
    with pytest.raises(EmptyTextError):
        semantic_similarity("", "x", embedder)


def test_similarity_matches_frozen_golden(embedder):
    # Golden computed once with the standalone n-gram oracle in
    # tests/test_embedding.py (gram_vector_oracle); frozen here.
    from tests.test_embedding import gram_vector_oracle

    a = "Keep litter dry to stop coccidiosis."
    b = "Dry litter prevents coccidiosis outbreaks."
    golden = float(
        np.dot(gram_vector_oracle(a, 256), gram_vector_oracle(b, 256))
    )
    assert semantic_similarity(a, b, embedder) == pytest.approx(golden, abs=1e-6)


# --- retrieval precision ----------------------------------------------------------


def test_precision_identical_vectors(embedder):
    vec = embedder.embed_text("feed intake")
    assert retrieval_precision(vec, [vec, vec]) == pytest.approx(1.0, abs=1e-6)


def test_precision_is_mean():
    query = np.zeros(4)
    query[0] = 1.0
    a = np.asarray([0.2, np.sqrt(1 - 0.04), 0, 0])
    b = np.asarray([0.6, np.sqrt(1 - 0.36), 0, 0])
    assert retrieval_precision(query, [a, b]) == pytest.approx(0.4, abs=1e-9)


def test_precision_empty_is_zero_with_warning(caplog):
    import logging

    with caplog.at_level(logging.WARNING):
        assert retrieval_precision(np.ones(4), []) == 0.0
    assert any("empty retrieval" in m for m in caplog.messages)


# --- histogram ----------------------------------------------------------------------


def test_histogram_direct_binning():
    assert histogram([0.1, 0.1, 0.55], 0.5, (0.0, 1.0)) == [(0.0, 2), (0.5, 1)]


def test_histogram_empty_values_all_zero():
    bins = histogram([], 0.25, (0.0, 1.0))
    assert [count for _lower, count in bins] == [0, 0, 0, 0]


def test_histogram_edge_value_goes_to_upper_bin():
    assert histogram([0.5], 0.5, (0.0, 1.0)) == [(0.0, 0), (0.5, 1)]


def test_histogram_respects_computed_edges_exactly():
    # Half-open binning holds against the reported bin edges even for
    # representation-hostile widths like 0.05.
    rng = np.random.default_rng(21)
    values = [0.15, 0.3, 0.0500000000000001, 0.1] + list(rng.uniform(0, 1, 50))
    bins = histogram(values, 0.05, (0.0, 1.0))
    edges = [lower for lower, _count in bins] + [0.0 + len(bins) * 0.05]
    for value in values:
        hits = [
            i
            for i in range(len(bins))
            if edges[i] <= value < edges[i + 1]
        ]
        assert len(hits) == 1
    recount = [0] * len(bins)
    for value in values:
        for i in range(len(bins)):
            if edges[i] <= value < edges[i + 1]:
                recount[i] += 1
    assert recount == [count for _lower, count in bins]


def test_histogram_out_of_range_clamped_into_end_bins():
    bins = histogram([-0.3, 1.7], 0.5, (0.0, 1.0))
    assert bins == [(0.0, 1), (0.5, 1)]


def test_histogram_counts_sum_to_n():
    rng = np.random.default_rng(8)
    values = list(rng.uniform(-0.2, 1.2, 137))
    bins = histogram(values, 0.05, (0.0, 1.0))
    assert sum(count for _lower, count in bins) == 137


def test_histogram_invalid_range():
    with pytest.raises(MalformedRecordError):
        histogram([0.1], 0.5, (1.0, 0.0))


# --- run_benchmark ------------------------------------------------------------------


def test_benchmark_deterministic_report_bytes(gt_records, eval_deps, tmp_path):
    options = BenchmarkOptions(with_baseline=True)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        evaluations, aggregates_ = run_benchmark(gt_records, eval_deps, options)
        write_report(evaluations, aggregates_, out)
    for name in ("per_query.jsonl", "aggregates.json", "histogram.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_benchmark_rag_beats_fixed_baseline(gt_records, eval_deps):
    evaluations, aggregates_ = run_benchmark(
        gt_records, eval_deps, BenchmarkOptions(with_baseline=True)
    )
    assert aggregates_.n == 30
    assert aggregates_.failed == 0
    assert aggregates_.baseline_mean_similarity is not None
    margin = (
        aggregates_.mean_semantic_similarity - aggregates_.baseline_mean_similarity
    )
    assert margin >= 0.10
    # baseline answers are the stub's fixed no-context string
    assert all(
        e.baseline_answer == "No relevant context found." for e in evaluations
    )


def test_benchmark_contexts_bounded_by_k(gt_records, eval_deps):
    evaluations, _ = run_benchmark(gt_records, eval_deps)
    assert all(e.contexts_count <= eval_deps.retrieval_cfg.k for e in evaluations)


def test_benchmark_failed_records_excluded_from_means(eval_deps):
    records = [
        GroundTruthRecord(id="ok", question="hydronex water for broilers?",
                          expected_answer="Water answer."),
        GroundTruthRecord(id="boom", question="   ", expected_answer="x"),
    ]
    evaluations, aggregates_ = run_benchmark(records, eval_deps)
    assert aggregates_.n == 1
    assert aggregates_.failed == 1
    failed = [e for e in evaluations if e.failed]
    assert len(failed) == 1 and failed[0].id == "boom" and failed[0].error


def test_benchmark_parallel_matches_serial(gt_records, eval_deps):
    serial, _ = run_benchmark(gt_records[:10], eval_deps, BenchmarkOptions())
    parallel, _ = run_benchmark(
        gt_records[:10], eval_deps, BenchmarkOptions(parallelism=4)
    )
    assert [e.id for e in serial] == [e.id for e in parallel]
    assert [e.generated_answer for e in serial] == [
        e.generated_answer for e in parallel
    ]


def test_aggregate_means_match_independent_recompute(gt_records, eval_deps):
    evaluations, aggregates_ = run_benchmark(
        gt_records, eval_deps, BenchmarkOptions(with_baseline=True)
    )
    ok = [e for e in evaluations if not e.failed]
    def plain_mean(values):
        return sum(values) / len(values)

    assert aggregates_.mean_semantic_similarity == pytest.approx(
        plain_mean([e.semantic_similarity for e in ok]), abs=1e-9
    )
    assert aggregates_.mean_retrieval_precision == pytest.approx(
        plain_mean([e.retrieval_precision for e in ok]), abs=1e-9
    )
    assert aggregates_.mean_latency_s == pytest.approx(
        plain_mean([e.latency_ms / 1000 for e in ok]), abs=1e-9
    )
    assert aggregates_.mean_contexts == pytest.approx(
        plain_mean([e.contexts_count for e in ok]), abs=1e-9
    )
    assert sum(count for _lower, count in aggregates_.histogram) == aggregates_.n


# --- report files ----------------------------------------------------------------------


def test_write_report_files_and_round_trip(gt_records, eval_deps, tmp_path):
    evaluations, aggregates_ = run_benchmark(gt_records[:5], eval_deps)
    files = write_report(evaluations, aggregates_, tmp_path / "report")
    assert files["per_query"].exists()
    assert files["aggregates"].exists()
    assert files["histogram"].exists()

    reloaded = aggregates_from_dict(
        json.loads(files["aggregates"].read_text(encoding="utf-8"))
    )
    assert reloaded == aggregates_

    lines = files["histogram"].read_text().strip().split("\n")
    assert lines[0] == "bin_lower,count"
    assert len(lines) == 1 + len(aggregates_.histogram)

    per_query = [
        json.loads(line)
        for line in files["per_query"].read_text().strip().split("\n")
    ]
    assert [p["id"] for p in per_query] == [e.id for e in evaluations]


def test_aggregates_dict_round_trip_identity():
    metrics = AggregateMetrics(
        n=3,
        failed=1,
        mean_semantic_similarity=0.5,
        mean_retrieval_precision=0.25,
        mean_latency_s=0.001,
        mean_contexts=5.5,
        histogram=[(0.0, 1), (0.5, 2)],
        baseline_mean_similarity=0.3,
    )
    assert aggregates_from_dict(aggregates_to_dict(metrics)) == metrics


def test_aggregate_of_empty_is_total():
    metrics = aggregate([])
    assert metrics.n == 0
    assert metrics.mean_semantic_similarity == 0.0
    assert sum(c for _l, c in metrics.histogram) == 0
