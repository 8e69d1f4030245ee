from __future__ import annotations

import pytest

from rag_cascade.corpus import Query, tokenize
from rag_cascade.dense import dense_search, embed_text
from rag_cascade.lexical import Bm25Params, bm25_idf, lexical_search
from rag_cascade.ranking import RankedList, ranked
from rag_cascade.workflows import (
    DEFAULT_HYDE_TEMPLATE,
    render_template,
    WORKFLOW_IDS,
    JaccardReranker,
    StageError,
    TransformerSpec,
    WorkflowConfig,
    expand_query,
    generate_hypothetical_doc,
    rerank,
    rrf_fuse,
    run_workflow,
)

from conftest import MINI_TEXTS


class TestRrfFuse:
    def test_single_list_scores(self):
        rl = ranked([("a", 9.0), ("b", 5.0), ("c", 1.0)], "bm25")
        fused = rrf_fuse([rl], rrf_k=60)
        assert fused.ids() == ["a", "b", "c"]
        assert [s for _, s in fused.items] == pytest.approx(
            [1 / 61, 1 / 62, 1 / 63]
        )

    def test_doc_in_both_lists_outranks_single(self):
        l1 = ranked([("x", 3.0), ("y", 2.0)], "bm25")
        l2 = ranked([("x", 0.9), ("z", 0.8)], "dense")
        fused = rrf_fuse([l1, l2], rrf_k=60)
        scores = dict(fused.items)
        assert scores["x"] == pytest.approx(2 / 61)
        assert scores["x"] == pytest.approx(0.032787, abs=1e-6)
        assert scores["y"] == pytest.approx(1 / 62)
        assert fused.ids()[0] == "x"

    def test_disjoint_lists_union_size(self):
        l1 = ranked([("a", 2.0), ("b", 1.0)], "bm25")
        l2 = ranked([("c", 0.9), ("d", 0.8), ("e", 0.7)], "dense")
        assert len(rrf_fuse([l1, l2], rrf_k=60)) == 5

    def test_score_bounds(self):
        lists = [
            ranked([(f"d{i}", 10.0 - i) for i in range(8)], "bm25"),
            ranked([(f"d{i}", 1.0 - i / 10) for i in range(4, 12)], "dense"),
        ]
        fused = rrf_fuse(lists, rrf_k=60)
        lo = 1 / (60 + 8)
        hi = 2 / (60 + 1)
        for _, score in fused.items:
            assert lo - 1e-12 <= score <= hi + 1e-12

    def test_requires_a_list(self):
        with pytest.raises(ValueError):
            rrf_fuse([], rrf_k=60)


class TestRerank:
    TEXTS = {
        "c1": "vind og vand ved møllen",
        "c2": "korn mel og brød",
        "c3": "mølle vind korn",
        "c4": "bageren brugte mel fra møllen til brød",
    }

    def test_identical_chunk_ranks_first(self):
        candidates = ranked([("c1", 3.0), ("c2", 2.0), ("c3", 1.0)], "bm25")
        out = rerank(
            candidates, Query("q", "mølle vind korn"), JaccardReranker(), self.TEXTS
        )
        assert out.ids()[0] == "c3"
        assert dict(out.items)["c3"] == pytest.approx(1.0)

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError, match="nothing to rerank"):
            rerank(RankedList(), Query("q", "x y"), JaccardReranker(), {})

    def test_matches_score_all_then_sort_oracle(self):
        q = Query("q", "mølle korn")
        scorer = JaccardReranker()
        candidates = ranked(
            [("c1", 4.0), ("c2", 3.0), ("c3", 2.0), ("c4", 1.0)], "bm25"
        )
        expected = sorted(
            ((cid, scorer.score(q.text, self.TEXTS[cid])) for cid, _ in candidates.items),
            key=lambda p: (-p[1], p[0]),
        )
        got = rerank(candidates, q, scorer, self.TEXTS)
        assert [cid for cid, _ in got.items] == [cid for cid, _ in expected]

    def test_same_chunk_set(self):
        candidates = ranked([("c2", 9.0), ("c1", 1.0)], "dense")
        out = rerank(candidates, Query("q", "brød"), JaccardReranker(), self.TEXTS)
        assert set(out.ids()) == {"c1", "c2"}


class TestExpandQuery:
    def test_no_lexical_hits_returns_query_verbatim(self, mini_indexes):
        spec = TransformerSpec(kind="prf_expansion", prf_terms=3)
        q = Query("q", "zebra okapi")
        assert expand_query(spec, q, mini_indexes.lexical) == "zebra okapi"

    def test_prf_terms_hand_enumerated(self, mini_indexes):
        # top-3 lexical hits for "mølle" land on c1 alone; the two highest
        # summed-BM25 terms of c1, excluding query tokens, are recomputed here
        spec = TransformerSpec(kind="prf_expansion", prf_terms=2)
        q = Query("q", "møllebyggeri")
        params = Bm25Params()
        idx = mini_indexes.lexical
        top = lexical_search(idx, params, q, 3)
        assert top.ids() == ["c1"]
        contributions = {}
        for term in tokenize(MINI_TEXTS["c1"]):
            if term == "møllebyggeri":
                continue
            tf = idx.term_frequency(term, "c1")
            length = idx.chunk_lengths["c1"]
            norm = params.k1 * (1 - params.b + params.b * length / idx.avg_chunk_length)
            contributions[term] = bm25_idf(idx, term) * tf * (params.k1 + 1) / (tf + norm)
        best2 = [t for t, _ in sorted(contributions.items(), key=lambda kv: (-kv[1], kv[0]))[:2]]
        got = expand_query(spec, q, idx, params)
        assert got == f"møllebyggeri {' '.join(best2)}"

    def test_llm_expansion_appends_completion(self, mini_indexes, llm_server):
        llm_server.chat_fn = lambda prompt: "vandmølle vindmølle"
        spec = TransformerSpec(
            kind="llm_expansion",
            endpoint=llm_server.url("/chat"),
            prompt_template="Udvid: {query}",
        )
        q = Query("q", "mølle")
        got = expand_query(spec, q, mini_indexes.lexical)
        assert got == "mølle vandmølle vindmølle"
        assert got.startswith(q.text)

    def test_prefix_property(self, mini_indexes):
        spec = TransformerSpec(kind="prf_expansion", prf_terms=4)
        for text in ["møllebyggeri", "stenkunst kysten", "zebra"]:
            out = expand_query(spec, Query("q", text), mini_indexes.lexical)
            assert out.startswith(text)

    def test_wrong_kind_rejected(self, mini_indexes):
        with pytest.raises(ValueError):
            expand_query(TransformerSpec(kind="identity"), Query("q", "x y"), mini_indexes.lexical)


class TestGenerateHypotheticalDoc:
    def test_template_deterministic(self):
        spec = TransformerSpec(kind="template_hyde")
        q = Query("q", "fjordforskning metoder")
        assert generate_hypothetical_doc(spec, q) == generate_hypothetical_doc(spec, q)

    def test_template_contains_every_query_token(self):
        spec = TransformerSpec(kind="template_hyde")
        for text in ["kystkultur", "sten og rav", "hvad er lyngheden?"]:
            doc = generate_hypothetical_doc(spec, Query("q", text))
            doc_tokens = set(tokenize(doc))
            assert set(tokenize(text)) <= doc_tokens
            assert doc

    def test_llm_hyde_returns_completion_verbatim(self, llm_server):
        llm_server.chat_fn = lambda prompt: "Fast svar om emnet."
        spec = TransformerSpec(
            kind="llm_hyde",
            endpoint=llm_server.url("/chat"),
            prompt_template="Skriv: {query}",
        )
        assert generate_hypothetical_doc(spec, Query("q", "emne")) == "Fast svar om emnet."

    def test_template_with_literal_braces_survives(self):
        spec = TransformerSpec(
            kind="template_hyde",
            prompt_template='{query} besvares som JSON: {"emne": "{query}"}',
        )
        doc = generate_hypothetical_doc(spec, Query("q", "rav"))
        assert doc == 'rav besvares som JSON: {"emne": "rav"}'

    def test_llm_hyde_empty_completion_rejected(self, llm_server):
        llm_server.chat_fn = lambda prompt: "   "
        spec = TransformerSpec(
            kind="llm_hyde",
            endpoint=llm_server.url("/chat"),
            prompt_template="Skriv: {query}",
        )
        with pytest.raises(ValueError, match="empty completion"):
            generate_hypothetical_doc(spec, Query("q", "emne"))


CONFIG = WorkflowConfig(k=10, tau=0.62)


class TestRunWorkflow:
    def test_hybrid_escalation_case(self, mini_indexes):
        # no lexical overlap and every dense similarity below tau
        q = Query("q", "zebraernes okapierne")
        res = run_workflow("hybrid", q, CONFIG, mini_indexes)
        assert res.has_sources is False
        assert len(res.docs) == 0

    def test_hybrid_equals_stage_composition(self, mini_indexes):
        q = Query("q", "mølle vind korn i landskabet")
        res = run_workflow("hybrid", q, CONFIG, mini_indexes)
        lex = lexical_search(mini_indexes.lexical, CONFIG.bm25, q, CONFIG.k)
        den = dense_search(
            mini_indexes.dense, embed_text(mini_indexes.embedder, q.text), CONFIG.k, CONFIG.tau
        )
        expected = rrf_fuse([lex, den], CONFIG.rrf_k).truncate(CONFIG.k)
        assert res.docs.items == expected.items

    def test_hyde_equals_dense_over_template_embedding(self, mini_indexes):
        q = Query("q", "stenkunst ved kysten")
        res = run_workflow("hyde", q, CONFIG, mini_indexes)
        hypo = render_template(DEFAULT_HYDE_TEMPLATE, q.text)
        expected = dense_search(
            mini_indexes.dense, embed_text(mini_indexes.embedder, hypo), CONFIG.k, CONFIG.tau
        )
        assert res.docs.items == expected.items
        assert res.transformer_output == hypo

    def test_semantic_ce_reorders_semantic(self, mini_indexes):
        q = Query("q", "møllebyggeri er et vigtigt håndværk med vand og vind i landskabet")
        sem = run_workflow("semantic", q, CONFIG, mini_indexes)
        sem_ce = run_workflow("semantic_ce", q, CONFIG, mini_indexes)
        assert set(sem.docs.ids()) == set(sem_ce.docs.ids())
        assert sem_ce.docs.ids()[0] == "c1"  # near-verbatim chunk wins the rerank

    def test_has_sources_iff_docs(self, mini_indexes):
        queries = [
            Query("q1", "mølle vand vind"),
            Query("q2", "zebraernes okapierne"),
            Query("q3", "kysthandel salt sild"),
        ]
        for wid in WORKFLOW_IDS:
            for q in queries:
                res = run_workflow(wid, q, CONFIG, mini_indexes)
                assert res.has_sources == bool(res.docs.items)

    def test_hybrid_superset_property(self, mini_indexes):
        for text in ["mølle", "sten ved kysten", "salt sild havne"]:
            q = Query("q", text)
            lex = lexical_search(mini_indexes.lexical, CONFIG.bm25, q, CONFIG.k)
            den = dense_search(
                mini_indexes.dense, embed_text(mini_indexes.embedder, text), CONFIG.k, CONFIG.tau
            )
            hybrid = run_workflow("hybrid", q, CONFIG, mini_indexes)
            if lex or den:
                assert hybrid.has_sources

    def test_deterministic_apart_from_latency(self, mini_indexes):
        q = Query("q", "mølle vind korn")
        for wid in WORKFLOW_IDS:
            a = run_workflow(wid, q, CONFIG, mini_indexes)
            b = run_workflow(wid, q, CONFIG, mini_indexes)
            assert a.docs == b.docs
            assert a.transformer_output == b.transformer_output
            assert a.has_sources == b.has_sources

    def test_stage_error_names_stage(self, mini_indexes):
        q = Query("q", "ab")  # two chars: tokenizes but yields no 3-grams
        with pytest.raises(StageError, match="embed"):
            run_workflow("semantic", q, CONFIG, mini_indexes)

    def test_qe_ce_records_expansion(self, mini_indexes):
        q = Query("q", "møllebyggeri")
        res = run_workflow("qe_ce", q, CONFIG, mini_indexes)
        assert res.transformer_output is not None
        assert res.transformer_output.startswith("møllebyggeri")
        assert res.has_sources

    def test_unknown_workflow_rejected(self, mini_indexes):
        with pytest.raises(ValueError):
            run_workflow("bogus", Query("q", "x y"), CONFIG, mini_indexes)
