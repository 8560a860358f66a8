"""Domain lexicon: keyword facets, abbreviations, typo correction support.

The lexicon drives three query-preparation behaviors: spell correction
(against domain keywords only, never a general dictionary), abbreviation
expansion, and keyword/category tagging. A starter poultry lexicon ships in
``coop_rag/data/lexicon.json``; deployments are expected to replace or
extend it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import InputError, MalformedRecordError

FACETS = (
    "species",
    "disease",
    "nutrition_topic",
    "reproduction_topic",
    "management_topic",
)


@dataclass(frozen=True)
class DomainLexicon:
    # facet -> frozenset of lowercase keywords; facets are disjoint after load
    keywords: dict[str, frozenset[str]] = field(default_factory=dict)
    abbreviations: dict[str, str] = field(default_factory=dict)
    max_edit_distance: int = 1

    def __post_init__(self):
        for key, expansion in self.abbreviations.items():
            if not key or not key.isupper() or not key.isalnum():
                raise InputError(
                    f"abbreviation key must be uppercase alphanumeric: {key!r}"
                )
            if not expansion.strip():
                raise InputError(f"abbreviation {key!r} has an empty expansion")

    @property
    def all_keywords(self) -> frozenset[str]:
        merged: set[str] = set()
        for terms in self.keywords.values():
            merged |= terms
        return frozenset(merged)

    def facet_of(self, token: str) -> str | None:
        for facet in FACETS:
            if token in self.keywords.get(facet, ()):
                return facet
        return None


def load_lexicon(path: str | Path | None = None) -> DomainLexicon:
    """Load a lexicon JSON file (the bundled starter set when path is None).

    Keywords are lowercased; duplicates across facets are tolerated and
    deduplicated in facet priority order (species first, then disease and
    the topic facets), so each term belongs to exactly one facet after load.
    """
    if path is None:
        raw = (
            resources.files("coop_rag").joinpath("data/lexicon.json").read_text("utf-8")
        )
    else:
        raw = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(f"lexicon is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedRecordError("lexicon root must be a JSON object")

    keyword_data = data.get("keywords") or {}
    if not isinstance(keyword_data, dict):
        raise MalformedRecordError("lexicon 'keywords' must be an object")
    seen: set[str] = set()
    facets: dict[str, frozenset[str]] = {}
    for facet in FACETS:
        terms = keyword_data.get(facet) or []
        if not isinstance(terms, list) or any(not isinstance(t, str) for t in terms):
            raise MalformedRecordError(
                f"lexicon facet {facet!r} must be a list of strings"
            )
        cleaned = {t.strip().lower() for t in terms if t.strip()}
        facets[facet] = frozenset(cleaned - seen)
        seen |= cleaned
    unknown = set(keyword_data) - set(FACETS)
    if unknown:
        raise MalformedRecordError(
            f"lexicon has unknown keyword facets: {sorted(unknown)}"
        )

    abbreviations = data.get("abbreviations") or {}
    if not isinstance(abbreviations, dict) or any(
        not isinstance(v, str) for v in abbreviations.values()
    ):
        raise MalformedRecordError("lexicon 'abbreviations' must map strings")
    max_distance = data.get("max_edit_distance", 1)
    if not isinstance(max_distance, int) or max_distance < 0:
        raise MalformedRecordError("max_edit_distance must be a non-negative integer")
    return DomainLexicon(
        keywords=facets,
        abbreviations=dict(abbreviations),
        max_edit_distance=max_distance,
    )


def edit_distance(a: str, b: str, cap: int | None = None) -> int:
    """Levenshtein distance with an optional early-exit cap."""
    if a == b:
        return 0
    if cap is not None and abs(len(a) - len(b)) > cap:
        return cap + 1
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        best = i
        for j, cb in enumerate(b, start=1):
            cost = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            )
            current.append(cost)
            best = min(best, cost)
        if cap is not None and best > cap:
            return cap + 1
        previous = current
    return previous[-1]
