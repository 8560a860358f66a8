import hashlib

import numpy as np
import pytest

from coop_rag.corpus import Chunk, ChunkMetadata
from coop_rag.embedding import EmbedderSpec, make_embedder
from coop_rag.errors import BackendTransportError, InputError
from coop_rag.index import KnowledgeIndex
from coop_rag.lexicon import DomainLexicon, edit_distance, load_lexicon
from coop_rag.query import (
    PreparedQuery,
    QueryCategory,
    StubVisionBackend,
    correct_spelling,
    detect_out_of_domain,
    expand_abbreviations,
    normalize_query,
    prepare_query,
    tag_keywords_and_category,
)
from coop_rag.retrieval import RetrievalConfig


def levenshtein_oracle(a: str, b: str) -> int:
    """Textbook DP, written independently of the package's implementation."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        table[i][0] = i
    for j in range(len(b) + 1):
        table[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return table[-1][-1]


STOPWORD_FREE_TEXTS = [
    "Coccidiosis prevention requires dry litter management plus "
    "anticoccidial rotation programs.",
    "Broiler houses need careful ventilation management during cold "
    "weather months.",
    "Layer hens producing eggs require calcium supplementation via oyster "
    "shell limestone.",
    "Newcastle disease vaccination schedules protect flocks from "
    "devastating outbreaks.",
]


@pytest.fixture(scope="module")
def mini_index():
    spec = EmbedderSpec(dims=256)
    embedder = make_embedder(spec)
    index = KnowledgeIndex(dims=256)
    chunks = [
        Chunk(
            chunk_id=f"m{i}#0000",
            doc_id=f"m{i}",
            ordinal=0,
            text=text,
            char_span=(0, len(text)),
            metadata=ChunkMetadata(source="s", title="t"),
        )
        for i, text in enumerate(STOPWORD_FREE_TEXTS)
    ]
    index.upsert_chunks(chunks, [embedder.embed_text(t) for t in STOPWORD_FREE_TEXTS])
    return index


# --- normalize ---------------------------------------------------------------


def test_normalize_spec_examples():
    assert normalize_query("How much water do broilers drink?") == [
        "how", "much", "water", "do", "broilers", "drink",
    ]
    assert normalize_query("") == []
    assert normalize_query("HPAI-positive") == ["hpai", "positive"]


def test_normalize_matches_index_tokenizer():
    from coop_rag.text import tokenize

    text = "Necrotic-Enteritis outbreaks: 20% mortality!"
    assert normalize_query(text) == tokenize(text)


# --- spelling correction -------------------------------------------------------


def test_edit_distance_agrees_with_oracle():
    pairs = [
        ("cocidiosis", "coccidiosis"),
        ("brolers", "broilers"),
        ("lighting", "lighting"),
        ("hen", "henhouse"),
        ("abc", "xyz"),
        ("", "feed"),
    ]
    for a, b in pairs:
        assert edit_distance(a, b) == levenshtein_oracle(a, b)


def test_correct_known_typo(lexicon):
    tokens, corrections = correct_spelling(["cocidiosis"], lexicon)
    assert tokens == ["coccidiosis"]
    assert corrections == [("cocidiosis", "coccidiosis")]
    # the replacement really is within the configured distance
    assert levenshtein_oracle("cocidiosis", "coccidiosis") <= lexicon.max_edit_distance


def test_exact_lexicon_token_untouched(lexicon):
    tokens, corrections = correct_spelling(["coccidiosis"], lexicon)
    assert tokens == ["coccidiosis"]
    assert corrections == []


def test_ambiguous_equidistant_candidates_pass_through():
    lexicon = DomainLexicon(
        keywords={"disease": frozenset({"hatch", "batch"})},
        abbreviations={},
        max_edit_distance=1,
    )
    assert levenshtein_oracle("catch", "hatch") == 1
    assert levenshtein_oracle("catch", "batch") == 1
    tokens, corrections = correct_spelling(["catch"], lexicon)
    assert tokens == ["catch"]
    assert corrections == []


def test_distant_tokens_pass_through(lexicon):
    tokens, corrections = correct_spelling(["astrophysics"], lexicon)
    assert tokens == ["astrophysics"]
    assert corrections == []


def test_correction_idempotent(lexicon):
    once, _ = correct_spelling(["cocidiosis", "brolers", "water"], lexicon)
    twice, corrections = correct_spelling(once, lexicon)
    assert twice == once
    assert corrections == []


def test_correction_picks_min_distance_layer():
    # "fed" is distance 1 from exactly one term -> corrected even though a
    # distance-2 term also exists under a larger cap
    lexicon = DomainLexicon(
        keywords={"nutrition_topic": frozenset({"feed", "fold"})},
        abbreviations={},
        max_edit_distance=2,
    )
    tokens, corrections = correct_spelling(["fed"], lexicon)
    assert tokens == ["feed"]
    assert corrections == [("fed", "feed")]


# --- abbreviation expansion ------------------------------------------------------


def test_hpai_expansion(lexicon):
    tokens, expansions = expand_abbreviations(["hpai"], lexicon)
    assert tokens == ["hpai", "highly", "pathogenic", "avian", "influenza"]
    assert expansions == [("HPAI", "highly pathogenic avian influenza")]


def test_fcr_expansion(lexicon):
    tokens, expansions = expand_abbreviations(["fcr"], lexicon)
    assert tokens == ["fcr", "feed", "conversion", "ratio"]
    assert expansions == [("FCR", "feed conversion ratio")]


def test_unknown_token_not_expanded(lexicon):
    tokens, expansions = expand_abbreviations(["water"], lexicon)
    assert tokens == ["water"]
    assert expansions == []


def test_expansion_idempotent(lexicon):
    once, _ = expand_abbreviations(["hpai", "outbreak"], lexicon)
    twice, expansions = expand_abbreviations(once, lexicon)
    assert sorted(twice) == sorted(once)
    assert expansions == []


def test_expansion_skipped_when_phrase_already_present(lexicon):
    tokens = ["highly", "pathogenic", "avian", "influenza", "hpai"]
    out, expansions = expand_abbreviations(tokens, lexicon)
    assert out == tokens
    assert expansions == []


def test_duplicate_abbreviation_expands_once(lexicon):
    tokens, expansions = expand_abbreviations(["fcr", "versus", "fcr"], lexicon)
    assert tokens.count("conversion") == 1
    assert len(expansions) == 1


# --- keyword tagging and category -------------------------------------------------


def test_disease_keyword_wins_category(lexicon):
    keywords, category = tag_keywords_and_category(
        ["coccidiosis", "feed", "broiler"], lexicon
    )
    assert category is QueryCategory.DIAGNOSIS
    assert ("coccidiosis", "disease") in keywords
    assert ("feed", "nutrition_topic") in keywords
    assert ("broiler", "species") in keywords


def test_nutrition_category(lexicon):
    _keywords, category = tag_keywords_and_category(["feed", "only"], lexicon)
    assert category is QueryCategory.NUTRITION


def test_reproduction_category(lexicon):
    _keywords, category = tag_keywords_and_category(["incubation"], lexicon)
    assert category is QueryCategory.REPRODUCTION


def test_management_category(lexicon):
    _keywords, category = tag_keywords_and_category(["ventilation"], lexicon)
    assert category is QueryCategory.MANAGEMENT


def test_no_hits_is_other(lexicon):
    keywords, category = tag_keywords_and_category(["of", "digital", "cameras"], lexicon)
    assert category is QueryCategory.OTHER
    assert keywords == []


def test_category_total_over_random_token_lists(lexicon):
    rng = np.random.default_rng(5)
    pool = ["feed", "egg", "vent", "xyzzy", "coccidiosis", "the", "housing"]
    for _ in range(100):
        tokens = [pool[int(i)] for i in rng.integers(0, len(pool), 4)]
        _k, category = tag_keywords_and_category(tokens, lexicon)
        assert isinstance(category, QueryCategory)


def test_species_alone_does_not_set_category(lexicon):
    _keywords, category = tag_keywords_and_category(["broiler"], lexicon)
    assert category is QueryCategory.OTHER


# --- image captioning ---------------------------------------------------------------


def test_stub_returns_canned_caption_per_hash():
    image = b"fake-image-bytes"
    digest = hashlib.sha256(image).hexdigest()
    stub = StubVisionBackend({digest: "pale comb and ruffled feathers"})
    assert stub.caption(image) == "pale comb and ruffled feathers"
    assert stub.calls == 1


def test_stub_unknown_hash_deterministic():
    stub = StubVisionBackend()
    first = stub.caption(b"abc")
    assert stub.caption(b"abc") == first


class FailingVision:
    def caption(self, image_bytes):
        raise BackendTransportError("vision down", backend="vision")


def _embedder():
    return make_embedder(EmbedderSpec(dims=256))


def test_no_image_means_no_vision_call(mini_index, lexicon):
    stub = StubVisionBackend()
    prepare_query(
        "Do broilers need extra calcium?", None, lexicon, _embedder(), mini_index,
        vision_backend=stub,
    )
    assert stub.calls == 0


def test_caption_appears_in_fused_text(mini_index, lexicon):
    image = b"droopy-bird"
    digest = hashlib.sha256(image).hexdigest()
    stub = StubVisionBackend({digest: "hen with drooping posture near feeder"})
    prepared = prepare_query(
        "what is wrong here", image, lexicon, _embedder(), mini_index,
        vision_backend=stub,
    )
    assert prepared.image_caption == "hen with drooping posture near feeder"
    assert "drooping posture" in prepared.fused_text
    # caption tokens participate in keyword tagging
    assert ("hen", "species") in prepared.keywords


def test_vision_failure_degrades_to_text_only(mini_index, lexicon):
    prepared = prepare_query(
        "my broiler looks sick", b"img", lexicon, _embedder(), mini_index,
        vision_backend=FailingVision(),
    )
    assert prepared.image_caption is None
    assert prepared.warnings and "vision" in prepared.warnings[0]
    assert prepared.embedding is not None


# --- out-of-domain flag ---------------------------------------------------------------


def test_ood_flag_rule():
    prepared = PreparedQuery(raw_text="x", normalized_tokens=["x"], keywords=[])
    assert detect_out_of_domain(prepared, 0.2, 0.35) is True
    assert detect_out_of_domain(prepared, 0.5, 0.35) is False
    prepared.keywords = [("broiler", "species")]
    assert detect_out_of_domain(prepared, 0.2, 0.35) is False


def test_ood_monotone_in_threshold():
    prepared = PreparedQuery(raw_text="x", normalized_tokens=["x"], keywords=[])
    flagged_at = [
        threshold
        for threshold in (0.1, 0.2, 0.3, 0.4, 0.5)
        if detect_out_of_domain(prepared, 0.25, threshold)
    ]
    # once flagged, raising the threshold keeps it flagged
    assert flagged_at == [0.3, 0.4, 0.5]


def test_species_free_low_score_query_flagged(mini_index, lexicon):
    prepared = prepare_query(
        "What's the impact of 20 lux light intensity?",
        None, lexicon, _embedder(), mini_index,
    )
    assert prepared.keywords == []
    assert prepared.ood_flag is True


def test_species_keyword_unflags(mini_index, lexicon):
    prepared = prepare_query(
        "What's the impact of 20 lux light intensity for my broiler production?",
        None, lexicon, _embedder(), mini_index,
    )
    assert ("broiler", "species") in prepared.keywords
    assert prepared.ood_flag is False


def test_disease_keyword_suffices_despite_low_scores(mini_index, lexicon):
    prepared = prepare_query(
        "hpai quarantine rules", None, lexicon, _embedder(), mini_index,
    )
    assert prepared.ood_flag is False  # keyword present, score irrelevant


# --- prepare_query end to end ----------------------------------------------------------


def test_prepare_query_plain_in_domain(mini_index, lexicon):
    prepared = prepare_query(
        "How much calcium do layer hens need?", None, lexicon, _embedder(), mini_index,
    )
    assert prepared.ood_flag is False
    assert prepared.embedding is not None
    assert prepared.category is QueryCategory.NUTRITION
    assert prepared.raw_text == "How much calcium do layer hens need?"


def test_prepare_query_requires_text_or_image(mini_index, lexicon):
    with pytest.raises(InputError):
        prepare_query("   ", None, lexicon, _embedder(), mini_index)


def test_prepare_query_corrects_both_misspellings(mini_index, lexicon):
    prepared = prepare_query(
        "cocidiosis in brolers", None, lexicon, _embedder(), mini_index,
    )
    assert ("cocidiosis", "coccidiosis") in prepared.corrections
    assert ("brolers", "broilers") in prepared.corrections
    assert prepared.category is QueryCategory.DIAGNOSIS
    assert "coccidiosis" in prepared.normalized_tokens
    assert "broilers" in prepared.normalized_tokens


def test_pipeline_preserves_original_surface(mini_index, lexicon):
    raw = "FCR targets for my brolers?"
    prepared = prepare_query(raw, None, lexicon, _embedder(), mini_index)
    assert prepared.raw_text == raw
    # corrections replace in place; expansions append after
    assert "fcr" in prepared.normalized_tokens
    assert "broilers" in prepared.normalized_tokens
    assert prepared.normalized_tokens[-3:] == ["feed", "conversion", "ratio"]


def test_corrected_tokens_present_in_normalized(mini_index, lexicon):
    prepared = prepare_query(
        "cocidiosis treatment", None, lexicon, _embedder(), mini_index,
    )
    for _original, corrected in prepared.corrections:
        assert corrected in prepared.normalized_tokens
