import json
from pathlib import Path

import pytest

from coop_rag.corpus import ChunkConfig, load_corpus, split_into_chunks
from coop_rag.embedding import EmbedderSpec, make_embedder
from coop_rag.index import KnowledgeIndex
from coop_rag.lexicon import load_lexicon

DATA_DIR = Path(__file__).parent / "data"

TEST_DIMS = 256


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon()


@pytest.fixture(scope="session")
def embedder_spec():
    return EmbedderSpec(dims=TEST_DIMS)


@pytest.fixture(scope="session")
def embedder(embedder_spec):
    return make_embedder(embedder_spec)


@pytest.fixture(scope="session")
def synthetic_documents():
    return load_corpus(DATA_DIR / "synthetic_corpus.jsonl", format="jsonl")


@pytest.fixture(scope="session")
def synthetic_chunks(synthetic_documents):
    chunks = []
    for doc in synthetic_documents:
        chunks.extend(split_into_chunks(doc, ChunkConfig()))
    return chunks


@pytest.fixture(scope="session")
def synthetic_index(synthetic_chunks, embedder, embedder_spec):
    index = KnowledgeIndex(
        dims=embedder_spec.dims, embedder_fingerprint=embedder_spec.fingerprint
    )
    vectors = embedder.embed_batch([c.text for c in synthetic_chunks])
    index.upsert_chunks(synthetic_chunks, vectors)
    return index


@pytest.fixture(scope="session")
def ground_truth_records():
    records = []
    with (DATA_DIR / "synthetic_ground_truth.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            records.append(json.loads(line))
    return records
