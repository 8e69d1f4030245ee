from __future__ import annotations

import math
import random

import numpy as np
import pytest

from rag_cascade.corpus import Query
from rag_cascade.evaluation import EvalRecord
from rag_cascade.routing import (
    AlwaysRouter,
    LinearRouter,
    OracleRouter,
    RidgeQueryRouter,
    RidgeRouter,
    RuleRouter,
    build_oracle_labels,
    default_rules,
    evaluate_router,
    featurize_char_ngrams,
    featurize_surface,
    load_router,
    load_stopwords,
    ridge_route,
    rule_route,
    save_router,
    train_linear_classifier,
    train_ridge_router,
)
from rag_cascade.workflows import WORKFLOW_IDS

from test_evaluation import record


def log_for(co_by_query: dict[str, dict[str, float]]) -> list[EvalRecord]:
    records = []
    for qid, cos in co_by_query.items():
        for wid, co in cos.items():
            records.append(record(qid, co if co > 1.0 else None, workflow=wid))
    return records


class TestOracleLabels:
    def test_cheapest_maximizer_wins(self):
        log = log_for(
            {"q1": {"semantic": 1.0, "semantic_ce": 1.0, "hybrid": 5.0, "qe_ce": 5.0, "hyde": 5.0}}
        )
        labels = build_oracle_labels(log, contrast_threshold=1.5)
        assert labels[0].label == "hybrid"
        assert labels[0].contrast == pytest.approx(4.0)
        assert labels[0].included is True

    def test_all_equal_excluded(self):
        log = log_for({"q1": {w: 3.0 for w in WORKFLOW_IDS}})
        labels = build_oracle_labels(log)
        assert labels[0].contrast == 0.0
        assert labels[0].included is False
        assert labels[0].label == "semantic"  # cheapest of the all-way tie

    def test_matches_brute_force_on_eight_queries(self):
        rng = random.Random(31)
        co_by_query = {
            f"q{i}": {w: rng.randint(2, 10) / 2 for w in WORKFLOW_IDS} for i in range(8)
        }
        labels = build_oracle_labels(log_for(co_by_query), contrast_threshold=1.5)
        by_id = {l.query_id: l for l in labels}
        for qid, cos in co_by_query.items():
            best = max(cos.values())
            worst = min(cos.values())
            cheapest = next(w for w in WORKFLOW_IDS if cos[w] == best)
            lab = by_id[qid]
            assert lab.label == cheapest
            assert lab.best_co == pytest.approx(best)
            assert lab.worst_co == pytest.approx(worst)
            assert lab.included == (best - worst >= 1.5)

    def test_cost_minimality_property(self):
        rng = random.Random(5)
        co_by_query = {
            f"q{i}": {w: rng.randint(2, 10) / 2 for w in WORKFLOW_IDS} for i in range(20)
        }
        co = co_by_query
        for lab in build_oracle_labels(log_for(co_by_query)):
            rank = WORKFLOW_IDS.index(lab.label)
            for cheaper in WORKFLOW_IDS[:rank]:
                assert co[lab.query_id][cheaper] < lab.best_co

    def test_missing_workflow_rejected(self):
        log = log_for({"q1": {"semantic": 3.0, "hybrid": 4.0}})
        with pytest.raises(ValueError, match="missing workflow"):
            build_oracle_labels(log)

    def test_cascade_rows_ignored(self):
        log = log_for({"q1": {w: 3.0 for w in WORKFLOW_IDS}})
        log.append(record("q1", 4.0, workflow="cascade"))
        labels = build_oracle_labels(log)
        assert labels[0].best_co == pytest.approx(3.0)


class TestRuleRoute:
    def test_interrogative_routes_to_hyde(self):
        assert rule_route(Query("q", "Hvad er impressionisme?"), default_rules()) == "hyde"

    def test_short_keyword_routes_to_hybrid(self):
        assert rule_route(Query("q", "menneskets anatomi"), default_rules()) == "hybrid"

    def test_default_routes_to_semantic(self):
        q = Query("q", "dansk guldalder maleri og litteratur historie")
        assert rule_route(q, default_rules()) == "semantic"

    def test_question_word_without_mark_still_hyde(self):
        assert rule_route(Query("q", "hvorfor er himlen blå"), default_rules()) == "hyde"


class TestCharNgrams:
    def test_windowing(self):
        vocab, _ = featurize_char_ngrams(["abcd"], n_lo=3, n_hi=3)
        assert vocab.terms == ["abc", "bcd"]

    def test_identical_texts_identical_vectors(self):
        _, matrix = featurize_char_ngrams(["sten og rav", "sten og rav"])
        assert np.array_equal(matrix[0], matrix[1])

    def test_hand_computed_tfidf(self):
        texts = ["abcd", "bcde", "abce", "bcbc"]
        vocab, matrix = featurize_char_ngrams(texts, n_lo=3, n_hi=3)
        n = 4
        grams = [sorted({t[i : i + 3] for i in range(len(t) - 2)}) for t in texts]
        df = {}
        for g in grams:
            for term in g:
                df[term] = df.get(term, 0) + 1
        assert vocab.terms == sorted(df)
        for row, text in enumerate(texts):
            counts = {}
            for i in range(len(text) - 2):
                counts[text[i : i + 3]] = counts.get(text[i : i + 3], 0) + 1
            raw = np.zeros(len(vocab.terms))
            for term, count in counts.items():
                idf = math.log((1 + n) / (1 + df[term])) + 1.0
                raw[vocab.terms.index(term)] = count * idf
            raw /= np.linalg.norm(raw)
            assert matrix[row] == pytest.approx(raw, abs=1e-9)

    def test_rows_unit_norm(self):
        _, matrix = featurize_char_ngrams(["mølle ved åen", "salt og sild", "x y"])
        for row in matrix:
            norm = float(np.linalg.norm(row))
            assert norm == pytest.approx(1.0, abs=1e-9) or norm == 0.0

    def test_transform_drops_unseen_grams(self):
        vocab, _ = featurize_char_ngrams(["abcd"], n_lo=3, n_hi=3)
        out = vocab.transform(["zzzz"])
        assert float(np.abs(out).sum()) == 0.0


class TestSurfaceFeatures:
    def test_question_features(self):
        f = featurize_surface("Hvad er x?")
        assert f["word_count"] == 3
        assert f["has_question_mark"] == 1.0
        assert f["interrogative_count"] == 1.0

    def test_empty_text_all_zero(self):
        f = featurize_surface("")
        assert all(v == 0.0 for v in f.values())

    def test_matches_recount_oracle(self):
        stopwords = load_stopwords()
        text = "hvor findes de bedste kilder om dansk historie?"
        f = featurize_surface(text, stopwords)
        tokens = text.replace("?", "").split()
        assert f["word_count"] == len(tokens)
        assert f["char_count"] == len(text)
        assert f["stopword_ratio"] == pytest.approx(
            sum(t in stopwords for t in tokens) / len(tokens)
        )
        assert f["mean_word_length"] == pytest.approx(
            sum(len(t) for t in tokens) / len(tokens)
        )


class TestLinearClassifier:
    def test_separable_two_class_perfect_training_accuracy(self):
        texts = [f"hvad er emne{i} og hvorfor?" for i in range(10)] + [
            f"emne{i} nøgleord opslag" for i in range(10)
        ]
        labels = ["hyde"] * 10 + ["hybrid"] * 10
        vocab, matrix = featurize_char_ngrams(texts)
        clf = train_linear_classifier(matrix, labels)
        assert clf.predict(matrix) == labels

    def test_identical_features_predict_majority(self):
        matrix = np.ones((9, 4))
        labels = ["hybrid"] * 6 + ["hyde"] * 3
        clf = train_linear_classifier(matrix, labels)
        assert set(clf.predict(matrix)) == {"hybrid"}

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            train_linear_classifier(np.ones((3, 2)), ["hyde", "hyde", "hyde"])

    def test_deterministic_given_seed_and_order(self):
        rng = random.Random(3)
        texts = [f"tekst nummer {rng.randint(0, 99)} om emner" for _ in range(30)]
        labels = [rng.choice(["semantic", "hybrid", "hyde"]) for _ in range(30)]
        _, matrix = featurize_char_ngrams(texts)
        a = train_linear_classifier(matrix, labels, seed=7)
        b = train_linear_classifier(matrix, labels, seed=7)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)

    def test_beats_majority_baseline_on_held_out_split(self):
        rng = random.Random(11)
        texts, labels = [], []
        for i in range(60):
            if i % 2:
                texts.append(f"hvad er fjordemne{i} og hvorfor findes det?")
                labels.append("hyde")
            else:
                texts.append(f"stenemne{i} opslag nøgleord")
                labels.append("hybrid")
        order = list(range(60))
        rng.shuffle(order)
        train_idx, test_idx = order[:40], order[40:]
        vocab, matrix = featurize_char_ngrams([texts[i] for i in train_idx])
        clf = train_linear_classifier(matrix, [labels[i] for i in train_idx])
        test_matrix = vocab.transform([texts[i] for i in test_idx])
        predictions = clf.predict(test_matrix)
        accuracy = sum(
            p == labels[i] for p, i in zip(predictions, test_idx)
        ) / len(test_idx)
        majority = max(
            sum(labels[i] == "hyde" for i in test_idx),
            sum(labels[i] == "hybrid" for i in test_idx),
        ) / len(test_idx)
        assert accuracy >= majority


def make_ridge_fixture(n=80, seed=23):
    """Feature matrix plus per-workflow co targets with learnable structure."""
    rng = random.Random(seed)
    texts, labels = [], []
    co = {w: [] for w in WORKFLOW_IDS}
    for i in range(n):
        kind = rng.choice(["keyword", "question"])
        if kind == "keyword":
            texts.append(f"emne{i} nøgleord opslag")
            labels.append("hybrid")
            pattern = {
                "semantic": 2.5, "semantic_ce": 2.5, "hybrid": 4.5, "qe_ce": 3.5, "hyde": 3.0,
            }
        else:
            texts.append(f"hvad er emne{i} og hvorfor?")
            labels.append("hyde")
            pattern = {
                "semantic": 1.0, "semantic_ce": 1.0, "hybrid": 1.5, "qe_ce": 3.0, "hyde": 4.5,
            }
        for w in WORKFLOW_IDS:
            co[w].append(pattern[w] + rng.choice([-0.5, 0.0, 0.0, 0.5]))
    vocab, matrix = featurize_char_ngrams(texts)
    co_arrays = {w: np.array(v) for w, v in co.items()}
    return vocab, matrix, co_arrays, labels, texts


class TestRidgeRouter:
    def test_rule_application_at_zero_delta(self):
        router = RidgeRouter(
            weights={w: np.zeros(2) for w in WORKFLOW_IDS},
            biases={
                "semantic": 1.0, "semantic_ce": 1.0, "hybrid": 4.6, "qe_ce": 1.0, "hyde": 4.5,
            },
            delta=0.0,
        )
        assert ridge_route(router, np.zeros(2)) == "hybrid"

    def test_margin_blocks_substitution(self):
        router = RidgeRouter(
            weights={w: np.zeros(2) for w in WORKFLOW_IDS},
            biases={
                "semantic": 1.0, "semantic_ce": 1.0, "hybrid": 4.6, "qe_ce": 1.0, "hyde": 4.5,
            },
            delta=0.2,
        )
        assert ridge_route(router, np.zeros(2)) == "hyde"

    def test_cheapest_qualifying_alternative_wins(self):
        router = RidgeRouter(
            weights={w: np.zeros(2) for w in WORKFLOW_IDS},
            biases={
                "semantic": 4.8, "semantic_ce": 4.9, "hybrid": 5.0, "qe_ce": 1.0, "hyde": 4.0,
            },
            delta=0.5,
        )
        assert ridge_route(router, np.zeros(2)) == "semantic"

    def test_substitution_rate_non_increasing_in_delta(self):
        vocab, matrix, co_arrays, labels, _texts = make_ridge_fixture()
        rates = []
        for delta in (0.0, 0.5, 0.75, 1.0, 2.5):
            router = train_ridge_router(matrix, co_arrays, delta=delta, strata=labels, seed=0)
            routed = [ridge_route(router, matrix[i]) for i in range(matrix.shape[0])]
            rates.append(sum(1 for w in routed if w != "hyde") / len(routed))
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert rates[0] > 0.0

    def test_training_deterministic(self):
        _vocab, matrix, co_arrays, labels, _texts = make_ridge_fixture(n=30)
        a = train_ridge_router(matrix, co_arrays, delta=0.5, strata=labels, seed=4)
        b = train_ridge_router(matrix, co_arrays, delta=0.5, strata=labels, seed=4)
        for w in WORKFLOW_IDS:
            assert np.array_equal(a.weights[w], b.weights[w])
            assert a.biases[w] == b.biases[w]

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            RidgeRouter(
                weights={w: np.zeros(1) for w in WORKFLOW_IDS},
                biases={w: 0.0 for w in WORKFLOW_IDS},
                delta=-0.1,
            )


class TestEvaluateRouter:
    def make_log(self, n=10, seed=13):
        rng = random.Random(seed)
        queries = [Query(f"q{i}", f"tekst om emne {i}") for i in range(n)]
        co_by_query = {
            q.query_id: {w: rng.randint(2, 10) / 2 for w in WORKFLOW_IDS} for q in queries
        }
        return queries, log_for(co_by_query), co_by_query

    def test_always_hyde_identity(self):
        queries, log, co = self.make_log()
        rep = evaluate_router(AlwaysRouter("hyde"), queries, log)
        hyde_mean = sum(co[q.query_id]["hyde"] for q in queries) / len(queries)
        assert rep.routed_co == pytest.approx(hyde_mean)
        assert rep.augmentation_free_rate == 0.0
        assert rep.oracle_gap_recovered in (None, pytest.approx(0.0))

    def test_oracle_router_recovers_full_gap(self):
        queries, log, _ = self.make_log()
        labels = {l.query_id: l.label for l in build_oracle_labels(log)}
        rep = evaluate_router(OracleRouter(labels), queries, log)
        assert rep.oracle_gap_recovered == pytest.approx(1.0)

    def test_matches_brute_force_lookup(self):
        queries, log, co = self.make_log()
        router = AlwaysRouter("hybrid")
        rep = evaluate_router(router, queries, log, cost_table={w: 1.0 + i for i, w in enumerate(WORKFLOW_IDS)})
        expected = sum(co[q.query_id]["hybrid"] for q in queries) / len(queries)
        assert rep.routed_co == pytest.approx(expected)
        assert rep.augmentation_free_rate == 1.0
        assert rep.mean_cost == pytest.approx(3.0)

    def test_oracle_upper_bounds_every_router(self):
        queries, log, _ = self.make_log(n=16, seed=3)
        labels = {l.query_id: l.label for l in build_oracle_labels(log)}
        oracle_co = evaluate_router(OracleRouter(labels), queries, log).routed_co
        routers = [
            AlwaysRouter(w) for w in WORKFLOW_IDS
        ] + [RuleRouter(default_rules())]
        for router in routers:
            assert oracle_co >= evaluate_router(router, queries, log).routed_co - 1e-12

    def test_missing_rows_rejected(self):
        queries = [Query("q0", "tekst")]
        log = log_for({"q0": {"semantic": 3.0, "hybrid": 4.0}})
        with pytest.raises(ValueError, match="missing workflow"):
            evaluate_router(AlwaysRouter("hyde"), queries, log)


class TestPersistence:
    def test_rule_router_round_trip(self, tmp_path):
        router = RuleRouter(default_rules())
        path = tmp_path / "rules.json"
        save_router(path, router)
        loaded = load_router(path)
        for text in ["Hvad er rav?", "menneskets anatomi", "en lang tekst om flere emner her"]:
            assert loaded.route(Query("q", text)) == router.route(Query("q", text))

    def test_linear_router_round_trip(self, tmp_path):
        texts = [f"hvad er emne{i}?" for i in range(6)] + [f"emne{i} opslag" for i in range(6)]
        labels = ["hyde"] * 6 + ["hybrid"] * 6
        vocab, matrix = featurize_char_ngrams(texts)
        clf = train_linear_classifier(matrix, labels)
        router = LinearRouter(vocab=vocab, model=clf)
        path = tmp_path / "linear.json"
        save_router(path, router)
        loaded = load_router(path)
        for text in texts:
            assert loaded.route(Query("q", text)) == router.route(Query("q", text))

    def test_ridge_router_round_trip(self, tmp_path):
        vocab, matrix, co_arrays, labels, texts = make_ridge_fixture(n=24)
        model = train_ridge_router(matrix, co_arrays, delta=0.75, strata=labels, seed=0)
        router = RidgeQueryRouter(vocab=vocab, model=model)
        path = tmp_path / "ridge.json"
        save_router(path, router)
        loaded = load_router(path)
        assert loaded.model.delta == 0.75
        for text in texts[:10]:
            assert loaded.route(Query("q", text)) == router.route(Query("q", text))

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other@9", "kind": "rules"}')
        with pytest.raises(ValueError, match="format"):
            load_router(path)
