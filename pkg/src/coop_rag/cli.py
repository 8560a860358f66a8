"""Operator command line: ingest, query, chat, serve, eval, report.

Exit codes form a closed set: 0 success, 1 I/O failure, 2 validation
failure, 3 backend failure. With ``--json`` a command writes exactly one
JSON document to stdout and keeps all logging on stderr, so output is safe
to pipe.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import CONFIG_ENV_VAR, ServiceConfig, load_config
from .errors import (
    BackendError,
    CoopRagError,
    InputError,
    PersistenceError,
)
from .embedding import make_embedder
from .evaluation import (
    BenchmarkOptions,
    aggregates_from_dict,
    load_ground_truth,
    run_benchmark,
    write_report,
)
from .index import load_index, save_index
from .ingest import build_index_from_corpus
from .lexicon import load_lexicon
from .orchestrator import ChatDeps, SessionStore, make_generation_backend
from .query import StubVisionBackend

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_BACKEND = 3


def _classify_error(exc: Exception) -> int:
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, (FileNotFoundError, OSError, PersistenceError)):
        return EXIT_IO
    if isinstance(exc, CoopRagError):
        return EXIT_VALIDATION
    return EXIT_VALIDATION


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}={value}")


def _load_cfg(args) -> ServiceConfig:
    return load_config(getattr(args, "config", None))


def _apply_retrieval_flags(cfg: ServiceConfig, args) -> ServiceConfig:
    retrieval = cfg.retrieval
    overrides = {}
    if getattr(args, "alpha", None) is not None:
        overrides["alpha"] = args.alpha
    if getattr(args, "k", None) is not None:
        overrides["k"] = args.k
    if getattr(args, "mmr_lambda", None) is not None:
        overrides["mmr_lambda"] = args.mmr_lambda
    if getattr(args, "pool_size", None) is not None:
        overrides["pool_size"] = args.pool_size
    if overrides:
        retrieval = replace(retrieval, **overrides)
    return replace(cfg, retrieval=retrieval)


def _build_deps(
    cfg: ServiceConfig, index, session_store=None, fixed_clock: bool = False
) -> ChatDeps:
    deps = ChatDeps(
        index=index,
        lexicon=load_lexicon(cfg.lexicon_path),
        embedder=make_embedder(cfg.embedder),
        generation_backend=make_generation_backend(cfg.generation),
        session_store=session_store or SessionStore(),
        retrieval_cfg=cfg.retrieval,
        vision_backend=StubVisionBackend() if cfg.vision.kind == "stub" else None,
        ood_threshold=cfg.ood_threshold,
        clarification_message=cfg.clarification_message,
        history_window=cfg.history_window,
    )
    if fixed_clock:
        deps = replace(deps, clock=lambda: 0.0)
    return deps


# --- subcommands ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    index, documents, chunks = build_index_from_corpus(
        args.corpus,
        corpus_format=args.format,
        chunk_cfg=cfg.chunking,
        embedder_spec=cfg.embedder,
    )
    save_index(index, args.index)
    _emit({"documents": documents, "chunks": chunks}, args.json)
    return EXIT_OK


def cmd_query(args) -> int:
    if not args.question or not args.question.strip():
        raise InputError("--question must be non-empty")
    cfg = _apply_retrieval_flags(_load_cfg(args), args)
    index = load_index(args.index, expected_dims=cfg.embedder.dims)
    deps = _build_deps(cfg, index)
    from .orchestrator import handle_chat

    outcome = handle_chat(None, args.question, None, deps, style=args.style)
    if args.json:
        answer = outcome.answer
        ledger = []
        if outcome.retrieval is not None:
            for chunk, candidate in outcome.retrieval.contexts:
                ledger.append(
                    {
                        "chunk_id": candidate.chunk_ref,
                        "semantic_sim": candidate.semantic_sim,
                        "lexical_raw": candidate.lexical_raw,
                        "lexical_norm": candidate.lexical_norm,
                        "fused": candidate.fused,
                        "boosted": candidate.boosted,
                        "mmr_final": candidate.mmr_final,
                        "selected_rank": candidate.selected_rank,
                        "source": chunk.metadata.source,
                    }
                )
        print(
            json.dumps(
                {
                    "answer": answer.text,
                    "citations": [
                        {"source": s, "title": t} for s, t in answer.citations
                    ],
                    "contexts_used": answer.contexts_used,
                    "ood": answer.ood,
                    "latency_ms": answer.latency_ms,
                    "style": answer.style,
                    "retrieval": ledger,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    else:
        print(outcome.answer.text)
    return EXIT_OK


def cmd_chat(args) -> int:
    cfg = _load_cfg(args)
    index = load_index(args.index, expected_dims=cfg.embedder.dims)
    deps = _build_deps(cfg, index)
    from .orchestrator import handle_chat

    session_id: str | None = None
    style: str | None = None
    print("coop-rag chat: /style concise|detailed, /new, /quit", file=sys.stderr)
    for raw_line in sys.stdin:
        line = raw_line.strip()
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/new":
            session_id = None
            print("(new session)", file=sys.stderr)
            continue
        if line.startswith("/style"):
            parts = line.split()
            if len(parts) == 2 and parts[1] in ("concise", "detailed"):
                style = parts[1]
                print(f"(style set to {style})", file=sys.stderr)
            else:
                print("usage: /style concise|detailed", file=sys.stderr)
            continue
        try:
            outcome = handle_chat(session_id, line, None, deps, style=style)
        except BackendError as exc:
            print(f"backend error: {exc}", file=sys.stderr)
            continue
        session_id = outcome.session_id
        style = None
        print(outcome.answer.text)
        print("", flush=True)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load_cfg(args)
    host, _, port = cfg.bind_address.partition(":")
    app = create_app(cfg)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _apply_retrieval_flags(_load_cfg(args), args)
    records = load_ground_truth(args.ground_truth)
    index = load_index(args.index, expected_dims=cfg.embedder.dims)
    stubs_only = (
        cfg.embedder.kind == "deterministic_hash"
        and cfg.generation.kind == "extractive_stub"
    )
    fixed_clock = stubs_only and not args.real_timing
    if fixed_clock:
        logger.info(
            "stub backends detected: using a fixed clock so reports are "
            "byte-reproducible (pass --real-timing to measure wall clock)"
        )
    deps = _build_deps(cfg, index, fixed_clock=fixed_clock)
    options = BenchmarkOptions(with_baseline=args.baseline)
    evaluations, aggregates = run_benchmark(records, deps, options)
    files = write_report(evaluations, aggregates, args.out)
    _emit(
        {
            "records": len(evaluations),
            "failed": aggregates.failed,
            "mean_semantic_similarity": aggregates.mean_semantic_similarity,
            "mean_retrieval_precision": aggregates.mean_retrieval_precision,
            "report_dir": str(Path(args.out)),
        },
        args.json,
    )
    logger.info("report files: %s", {k: str(v) for k, v in files.items()})
    return EXIT_OK


def _render_histogram_svg(histogram: list[tuple[float, int]], path: Path) -> None:
    """Write a dependency-free SVG bar chart, one rect per non-empty bin."""
    width, height, pad = 640, 320, 40
    max_count = max((count for _, count in histogram), default=0)
    bins = len(histogram)
    bar_w = (width - 2 * pad) / max(bins, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        f'stroke="black"/>',
    ]
    for i, (lower, count) in enumerate(histogram):
        if count == 0:
            continue
        bar_h = (height - 2 * pad) * count / max_count
        x = pad + i * bar_w
        y = height - pad - bar_h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
            f'height="{bar_h:.2f}" fill="#4a7dbd">'
            f"<title>[{lower:g}, +{bins and (histogram[1][0] - histogram[0][0]) if bins > 1 else 0:g}): {count}</title></rect>"
        )
    for i, (lower, _count) in enumerate(histogram):
        if bins <= 10 or i % max(1, bins // 10) == 0:
            x = pad + i * bar_w
            parts.append(
                f'<text x="{x:.2f}" y="{height - pad + 14}" '
                f'font-size="10" text-anchor="middle">{lower:g}</text>'
            )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def cmd_report(args) -> int:
    report_dir = Path(args.report)
    aggregates_path = report_dir / "aggregates.json"
    if not aggregates_path.exists():
        raise FileNotFoundError(f"no aggregates.json under {report_dir}")
    aggregates = aggregates_from_dict(
        json.loads(aggregates_path.read_text(encoding="utf-8"))
    )
    rows = [
        ("queries evaluated", str(aggregates.n)),
        ("failed records", str(aggregates.failed)),
        ("mean semantic similarity", f"{aggregates.mean_semantic_similarity:.4f}"),
        ("mean retrieval precision", f"{aggregates.mean_retrieval_precision:.4f}"),
        ("mean latency (s)", f"{aggregates.mean_latency_s:.4f}"),
        ("mean contexts", f"{aggregates.mean_contexts:.4f}"),
    ]
    if aggregates.baseline_mean_similarity is not None:
        rows.append(
            (
                "baseline mean similarity",
                f"{aggregates.baseline_mean_similarity:.4f}",
            )
        )
    label_width = max(len(label) for label, _ in rows)
    print("metric".ljust(label_width) + "  value")
    print("-" * (label_width + 8))
    for label, value in rows:
        print(label.ljust(label_width) + "  " + value)
    svg_path = Path(args.out) if args.out else report_dir / "histogram.svg"
    _render_histogram_svg(aggregates.histogram, svg_path)
    print(f"histogram written to {svg_path}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coop-rag",
        description=(
            "Hybrid-retrieval consultation engine: ingest a corpus, ask "
            "questions, serve the API, run benchmarks."
        ),
    )
    parser.add_argument(
        "--verbose", action="store_true", help="debug logging on stderr"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_config(p):
        p.add_argument(
            "--config",
            default=None,
            help=f"config JSON path (or ${CONFIG_ENV_VAR})",
        )

    def add_retrieval_flags(p):
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--lambda", dest="mmr_lambda", type=float, default=None)
        p.add_argument("--pool-size", dest="pool_size", type=int, default=None)

    p = sub.add_parser("ingest", help="build an index from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--format", choices=("jsonl", "text_dir"), default="jsonl")
    p.add_argument("--json", action="store_true")
    add_config(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="one-shot question against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--style", choices=("concise", "detailed"), default=None)
    p.add_argument("--json", action="store_true")
    add_retrieval_flags(p)
    add_config(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--index", required=True)
    add_config(p)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP API")
    add_config(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="run a ground-truth benchmark")
    p.add_argument("--ground-truth", dest="ground_truth", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", action="store_true")
    p.add_argument(
        "--real-timing",
        dest="real_timing",
        action="store_true",
        help="measure wall-clock latency even with stub backends",
    )
    p.add_argument("--json", action="store_true")
    add_retrieval_flags(p)
    add_config(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render report files to table + SVG")
    p.add_argument("--report", required=True, help="directory written by eval")
    p.add_argument("--out", default=None, help="SVG output path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 -CLI boundary
        code = _classify_error(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
