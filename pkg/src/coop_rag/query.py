"""Query preparation: normalize, correct, expand, tag, caption, embed.

Raw user input (text plus an optional image) becomes a ``PreparedQuery``
carrying everything retrieval and generation need. The pipeline never
deletes the user's tokens: spelling corrections replace a token in place,
abbreviation expansions append their words, and ``raw_text`` is preserved
verbatim.

Out-of-domain detection is a two-factor rule: a query is flagged only when
it contains no domain keywords AND a preview retrieval pass scores below
the configured threshold. Either signal alone keeps the query in-domain.
"""

from __future__ import annotations

import base64
import hashlib
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    BackendResponseError,
    BackendStatusError,
    BackendTransportError,
    InputError,
)
from .index import KnowledgeIndex
from .lexicon import FACETS, DomainLexicon, edit_distance
from .retrieval import RetrievalConfig, best_fused_score
from .text import tokenize

DEFAULT_OOD_THRESHOLD = 0.35


class QueryCategory(str, Enum):
    DIAGNOSIS = "diagnosis"
    NUTRITION = "nutrition"
    REPRODUCTION = "reproduction"
    MANAGEMENT = "management"
    OTHER = "other"


# Facet priority for category assignment; species keywords identify the
# subject but never decide the category on their own.
_CATEGORY_BY_FACET = (
    ("disease", QueryCategory.DIAGNOSIS),
    ("nutrition_topic", QueryCategory.NUTRITION),
    ("reproduction_topic", QueryCategory.REPRODUCTION),
    ("management_topic", QueryCategory.MANAGEMENT),
)


@dataclass
class PreparedQuery:
    raw_text: str
    normalized_tokens: list[str]
    corrections: list[tuple[str, str]] = field(default_factory=list)
    expansions: list[tuple[str, str]] = field(default_factory=list)
    keywords: list[tuple[str, str]] = field(default_factory=list)
    category: QueryCategory = QueryCategory.OTHER
    image_caption: str | None = None
    ood_flag: bool = False
    fused_text: str = ""
    embedding: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)


def normalize_query(text: str) -> list[str]:
    """Same tokenizer the index uses; queries and chunks must agree."""
    return tokenize(text)


def correct_spelling(
    tokens: list[str], lexicon: DomainLexicon
) -> tuple[list[str], list[tuple[str, str]]]:
    """Replace out-of-lexicon tokens by their unique nearest domain keyword.

    A token is corrected only when exactly one lexicon keyword sits at the
    minimum edit distance within ``max_edit_distance``; ambiguous or distant
    tokens pass through unchanged.
    """
    known = lexicon.all_keywords
    cap = lexicon.max_edit_distance
    corrected: list[str] = []
    corrections: list[tuple[str, str]] = []
    for token in tokens:
        if token in known or cap == 0:
            corrected.append(token)
            continue
        best_distance = cap + 1
        best_terms: list[str] = []
        for term in known:
            distance = edit_distance(token, term, cap=cap)
            if distance < best_distance:
                best_distance = distance
                best_terms = [term]
            elif distance == best_distance:
                best_terms.append(term)
        if best_distance <= cap and len(best_terms) == 1:
            corrected.append(best_terms[0])
            corrections.append((token, best_terms[0]))
        else:
            corrected.append(token)
    return corrected, corrections


def _contains_subsequence(tokens: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(tokens):
        return False
    for i in range(len(tokens) - len(needle) + 1):
        if tokens[i : i + len(needle)] == needle:
            return True
    return False


def expand_abbreviations(
    tokens: list[str], lexicon: DomainLexicon
) -> tuple[list[str], list[tuple[str, str]]]:
    """Append expansion words for any token that is a known abbreviation.

    The abbreviation token itself is retained so lexical search can match
    either surface form. Expansion is idempotent: a phrase already present
    as a contiguous run of tokens is not appended again, and appended words
    are never re-expanded.
    """
    result = list(tokens)
    expansions: list[tuple[str, str]] = []
    seen_keys: set[str] = set()
    for token in tokens:
        key = token.upper()
        if key in seen_keys:
            continue
        phrase = lexicon.abbreviations.get(key)
        if phrase is None:
            continue
        seen_keys.add(key)
        phrase_tokens = tokenize(phrase)
        if _contains_subsequence(result, phrase_tokens):
            continue
        result.extend(phrase_tokens)
        expansions.append((key, phrase))
    return result, expansions


def tag_keywords_and_category(
    tokens: list[str], lexicon: DomainLexicon
) -> tuple[list[tuple[str, str]], QueryCategory]:
    keywords: list[tuple[str, str]] = []
    seen: set[str] = set()
    facets_hit: set[str] = set()
    for token in tokens:
        if token in seen:
            continue
        facet = lexicon.facet_of(token)
        if facet is not None:
            keywords.append((token, facet))
            seen.add(token)
            facets_hit.add(facet)
    for facet, category in _CATEGORY_BY_FACET:
        if facet in facets_hit:
            return keywords, category
    return keywords, QueryCategory.OTHER


# --- image captioning ---------------------------------------------------------


class StubVisionBackend:
    """Deterministic test backend: canned caption per image fingerprint."""

    def __init__(self, captions_by_hash: dict[str, str] | None = None):
        self.captions_by_hash = captions_by_hash or {}
        self.calls = 0

    def caption(self, image_bytes: bytes) -> str:
        if not image_bytes:
            raise InputError("empty image")
        self.calls += 1
        digest = hashlib.sha256(image_bytes).hexdigest()
        return self.captions_by_hash.get(
            digest, f"visual observation {digest[:8]}"
        )


class RemoteVisionBackend:
    """HTTP captioning backend: POST {base_url}/caption."""

    def __init__(
        self,
        base_url: str,
        auth_env_var: str = "",
        timeout_ms: int = 20_000,
        prompt: str = (
            "Describe visible symptoms, body condition, behavior, and "
            "environment in this poultry image."
        ),
        transport=None,
    ):
        import httpx

        headers = {}
        token = os.environ.get(auth_env_var or "", "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.prompt = prompt
        self._client = httpx.Client(
            base_url=base_url,
            headers=headers,
            timeout=timeout_ms / 1000.0,
            transport=transport,
        )

    def caption(self, image_bytes: bytes) -> str:
        import httpx

        if not image_bytes:
            raise InputError("empty image")
        payload = {
            "image_base64": base64.b64encode(image_bytes).decode("ascii"),
            "prompt": self.prompt,
        }
        try:
            response = self._client.post("/caption", json=payload)
        except httpx.TransportError as exc:
            raise BackendTransportError(
                f"vision backend unreachable: {exc}", backend="vision"
            ) from exc
        if response.status_code < 200 or response.status_code >= 300:
            raise BackendStatusError(
                f"vision backend returned HTTP {response.status_code}",
                backend="vision",
                status_code=response.status_code,
            )
        try:
            caption = response.json()["caption"]
        except Exception as exc:
            raise BackendResponseError(
                "vision response missing 'caption'", backend="vision"
            ) from exc
        if not isinstance(caption, str) or not caption.strip():
            raise BackendResponseError(
                "vision backend returned an empty caption", backend="vision"
            )
        return caption


def caption_image(image_bytes: bytes, vision_backend) -> str:
    if vision_backend is None:
        raise InputError("no vision backend configured")
    if not image_bytes:
        raise InputError("empty image")
    return vision_backend.caption(image_bytes)


# --- out-of-domain flag + full pipeline ---------------------------------------


def detect_out_of_domain(
    prepared: PreparedQuery, preview_max_fused: float, threshold: float
) -> bool:
    """Flag when no domain keyword was found and retrieval previews weak."""
    return not prepared.keywords and preview_max_fused < threshold


def prepare_query(
    raw_text: str,
    image: bytes | None,
    lexicon: DomainLexicon,
    embedder,
    index: KnowledgeIndex,
    retrieval_cfg: RetrievalConfig | None = None,
    ood_threshold: float = DEFAULT_OOD_THRESHOLD,
    vision_backend=None,
) -> PreparedQuery:
    text = (raw_text or "").strip()
    if not text and not image:
        raise InputError("a question or an image is required")

    caption: str | None = None
    warnings: list[str] = []
    if image:
        try:
            caption = caption_image(image, vision_backend)
        except (BackendTransportError, BackendStatusError, BackendResponseError) as exc:
            warnings.append(f"image ignored, vision backend failed: {exc}")
        except InputError as exc:
            warnings.append(f"image ignored: {exc}")
    if not text and caption is None:
        raise InputError(
            "image-only query could not be captioned; provide a text question"
        )

    tokens = normalize_query(text)
    if caption:
        tokens = tokens + normalize_query(caption)
    tokens, corrections = correct_spelling(tokens, lexicon)
    tokens, expansions = expand_abbreviations(tokens, lexicon)
    keywords, category = tag_keywords_and_category(tokens, lexicon)

    fused_parts = [text] if text else []
    fused_parts.extend(phrase for _key, phrase in expansions)
    if caption:
        fused_parts.append(caption)
    fused_text = " ".join(fused_parts)

    prepared = PreparedQuery(
        raw_text=raw_text,
        normalized_tokens=tokens,
        corrections=corrections,
        expansions=expansions,
        keywords=keywords,
        category=category,
        image_caption=caption,
        fused_text=fused_text,
        embedding=embedder.embed_text(fused_text),
        warnings=warnings,
    )
    preview = best_fused_score(
        prepared.embedding,
        prepared.normalized_tokens,
        [token for token, _ in keywords],
        index,
        retrieval_cfg or RetrievalConfig(),
    )
    prepared.ood_flag = detect_out_of_domain(prepared, preview, ood_threshold)
    return prepared
