"""Scoring kernel dispatch.

The hot loops of retrieval (dense scan, BM25 accumulation, greedy MMR) live
behind this module. At import time the compiled extension is preferred; the
numpy fallback keeps the package fully functional without a compiler. Set
``COOP_RAG_KERNELS=fallback`` (or ``native``) to force a backend, e.g. for
the benchmark in ``benchmarks/bench_kernels.py``.
"""

import os

from . import fallback as _fallback

_forced = os.environ.get("COOP_RAG_KERNELS", "").strip().lower()

_impl = None
if _forced in ("", "native"):
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = None
        if _forced == "native":
            raise ImportError(
                "COOP_RAG_KERNELS=native but the compiled extension is not "
                "available; reinstall with Cython and a C compiler"
            )
if _impl is None:
    _impl = _fallback

ACTIVE_BACKEND: str = _impl.BACKEND_NAME

dot_scan = _impl.dot_scan
bm25_accumulate = _impl.bm25_accumulate
mmr_select = _impl.mmr_select


def available_backends() -> list[str]:
    backends = ["fallback"]
    try:
        from . import _native  # noqa: F401

        backends.insert(0, "native")
    except ImportError:
        pass
    return backends


def get_backend(name: str):
    """Return the kernel module for ``name`` (used by tests and benchmarks)."""
    if name == "fallback":
        return _fallback
    if name == "native":
        from . import _native

        return _native
    raise ValueError(f"unknown kernel backend: {name!r}")
