from __future__ import annotations

import numpy as np
import pytest

from rag_cascade.clients import EndpointError
from rag_cascade.dense import (
    EmbedderSpec,
    Embedding,
    UnembeddableTextError,
    build_dense_index,
    dense_search,
    embed_text,
)

from conftest import make_chunk

MOCK = EmbedderSpec(dimension=256)


class TestEmbedding:
    def test_norm_enforced(self):
        with pytest.raises(ValueError):
            Embedding(np.array([1.0, 1.0]))
        Embedding(np.array([1.0, 0.0]))  # unit vector accepted

    def test_external_spec_requires_endpoint(self):
        with pytest.raises(ValueError):
            EmbedderSpec(kind="external_endpoint")


class TestEmbedText:
    def test_deterministic(self):
        a = embed_text(MOCK, "fjordforskning i Danmark")
        b = embed_text(MOCK, "fjordforskning i Danmark")
        assert np.array_equal(a.vector, b.vector)

    def test_single_char_unembeddable(self):
        with pytest.raises(UnembeddableTextError, match="unembeddable"):
            embed_text(MOCK, "a")

    def test_self_cosine_is_one(self):
        v = embed_text(MOCK, "kystkultur og havet").vector
        assert float(v @ v) == pytest.approx(1.0, abs=1e-6)

    def test_case_and_punctuation_normalized(self):
        a = embed_text(MOCK, "Kystkultur, og havet!")
        b = embed_text(MOCK, "kystkultur og havet")
        assert np.allclose(a.vector, b.vector)


class TestExternalEmbedder:
    def test_round_trip_and_renormalization(self, llm_server):
        llm_server.embed_fn = lambda text: [3.0, 4.0, 0.0]
        spec = EmbedderSpec(
            kind="external_endpoint",
            dimension=3,
            endpoint=llm_server.url("/embed"),
            model_name="test-embedder",
        )
        emb = embed_text(spec, "hav")
        assert emb.vector == pytest.approx([0.6, 0.8, 0.0])

    def test_non_conforming_response(self, llm_server):
        spec = EmbedderSpec(
            kind="external_endpoint",
            dimension=3,
            endpoint=llm_server.url("/broken"),
            model_name="test-embedder",
        )
        with pytest.raises(EndpointError, match="non-conforming"):
            embed_text(spec, "hav")

    def test_retries_then_succeeds(self, llm_server):
        llm_server.embed_fn = lambda text: [1.0, 0.0, 0.0]
        llm_server.fail_next = 2
        spec = EmbedderSpec(
            kind="external_endpoint",
            dimension=3,
            endpoint=llm_server.url("/embed"),
            model_name="test-embedder",
            retries=2,
        )
        emb = embed_text(spec, "hav")
        assert emb.vector[0] == pytest.approx(1.0)

    def test_unreachable_endpoint(self):
        spec = EmbedderSpec(
            kind="external_endpoint",
            dimension=3,
            endpoint="http://127.0.0.1:9/embed",
            model_name="x",
            retries=0,
            timeout_s=0.2,
        )
        with pytest.raises(EndpointError):
            embed_text(spec, "hav")


@pytest.fixture(scope="module")
def small_index():
    texts = [
        "mølle vind korn", "hav kyst strand bølger", "skov birke lyng mose",
        "jernudvinding og smedning", "kornhøst på marken",
    ]
    chunks = [make_chunk(f"c{i}", t) for i, t in enumerate(texts)]
    return build_dense_index(chunks, MOCK)


@pytest.fixture(scope="module")
def big_index():
    texts = [f"emne{i} ord{i} tekst om nummer {i} og lidt mere indhold" for i in range(20)]
    chunks = [make_chunk(f"c{i:02d}", t) for i, t in enumerate(texts)]
    return build_dense_index(chunks, MOCK)


class TestDenseSearch:
    def test_indexed_vector_ranks_first(self, small_index):
        q = embed_text(MOCK, "hav kyst strand bølger")
        result = dense_search(small_index, q, k=3, tau=0.0)
        assert result.items[0][0] == "c1"
        assert result.items[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_tau_above_all_returns_empty(self, small_index):
        q = embed_text(MOCK, "mølle vind korn")
        assert len(dense_search(small_index, q, k=3, tau=1.0 + 1e-9)) == 0

    def test_matches_exhaustive_oracle(self, big_index):
        for text in ["emne3 ord3", "tekst om nummer", "ord17 indhold", "noget helt andet her"]:
            q = embed_text(MOCK, text)
            sims = big_index.matrix @ q.vector
            expected = sorted(
                ((cid, float(s)) for cid, s in zip(big_index.ids, sims) if s >= 0.2),
                key=lambda p: (-p[1], p[0]),
            )[:5]
            got = dense_search(big_index, q, k=5, tau=0.2)
            assert list(got.items) == expected

    def test_tau_monotonicity(self, big_index):
        q = embed_text(MOCK, "tekst om nummer og indhold")
        previous = None
        for tau in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]:
            ids = set(dense_search(big_index, q, k=20, tau=tau).ids())
            if previous is not None:
                assert ids <= previous
            previous = ids

    def test_similarities_bounded(self, big_index):
        for text in ["emne1 ord1", "korn og hav", "x y z tekst"]:
            q = embed_text(MOCK, text)
            sims = big_index.matrix @ q.vector
            assert float(np.abs(sims).max()) <= 1.0 + 1e-6

    def test_dimension_mismatch(self, small_index):
        q = embed_text(EmbedderSpec(dimension=128), "hav kyst")
        with pytest.raises(ValueError, match="dimension"):
            dense_search(small_index, q, k=3, tau=0.0)

    def test_duplicate_ids_rejected(self):
        chunks = [make_chunk("c", "sol og måne"), make_chunk("c", "hav og vind")]
        with pytest.raises(ValueError, match="duplicate"):
            build_dense_index(chunks, MOCK)
