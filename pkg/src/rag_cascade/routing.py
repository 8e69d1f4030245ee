"""Oracle-label construction and the pre-retrieval routing baselines.

These routers try to predict, from the query text alone, which workflow
to run. The oracle labels give the ceiling: per query, the cheapest
workflow that attains the best composite score. Three trainable-or-fixed
paradigms are kept, one per family: hand-written rules, a multinomial
logistic classifier over TF-IDF character n-grams, and a ridge
delta-router that substitutes a cheaper workflow for the expensive
default only when its predicted score wins by a margin.
"""

from __future__ import annotations

import importlib.resources
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import Query, tokenize
from .evaluation import EvalRecord
from .workflows import TIER1_WORKFLOWS, WORKFLOW_IDS

DEFAULT_CONTRAST_THRESHOLD = 1.5
DANISH_INTERROGATIVES = ("hvad", "hvordan", "hvorfor", "hvem", "hvornår", "hvor")

MODEL_FORMAT = "router-model@1"


def load_stopwords() -> frozenset[str]:
    text = (
        importlib.resources.files("rag_cascade")
        .joinpath("assets/stopwords_da.txt")
        .read_text(encoding="utf-8")
    )
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


# ---------------------------------------------------------------------------
# Oracle labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleLabel:
    query_id: str
    label: str
    best_co: float
    worst_co: float
    contrast: float
    included: bool


def build_oracle_labels(
    records: list[EvalRecord],
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    cost_order: tuple[str, ...] = WORKFLOW_IDS,
) -> list[OracleLabel]:
    """Per-query best-workflow labels from a score log.

    The label is the cheapest workflow among those attaining the best
    CO; a query is included in the routing subset only when best and
    worst diverge by at least the contrast threshold. Rows for
    strategies outside cost_order (e.g. a cascade run) are ignored.
    """
    by_query: dict[str, dict[str, float]] = {}
    for r in records:
        if r.workflow in cost_order:
            by_query.setdefault(r.query_id, {})[r.workflow] = r.co
    labels: list[OracleLabel] = []
    for qid in sorted(by_query):
        cos = by_query[qid]
        missing = [w for w in cost_order if w not in cos]
        if missing:
            raise ValueError(f"query {qid!r} missing workflow rows: {missing}")
        best = max(cos.values())
        worst = min(cos.values())
        label = next(w for w in cost_order if cos[w] == best)
        contrast = best - worst
        labels.append(
            OracleLabel(
                query_id=qid,
                label=label,
                best_co=best,
                worst_co=worst,
                contrast=contrast,
                included=contrast >= contrast_threshold,
            )
        )
    return labels


# ---------------------------------------------------------------------------
# Rule-based routing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    name: str
    workflow: str

    def matches(self, query: Query) -> bool:
        tokens = tokenize(query.text)
        if self.name == "interrogative":
            return "?" in query.text or any(t in DANISH_INTERROGATIVES for t in tokens)
        if self.name == "short_keyword":
            return len(tokens) <= 3
        raise ValueError(f"unknown rule {self.name!r}")


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    default: str


def default_rules() -> RuleSet:
    """Question-shaped queries go to hyde, short keyword lookups to
    hybrid, everything else to semantic."""
    return RuleSet(
        rules=(
            Rule("interrogative", "hyde"),
            Rule("short_keyword", "hybrid"),
        ),
        default="semantic",
    )


def rule_route(query: Query, rules: RuleSet) -> str:
    for rule in rules.rules:
        if rule.matches(query):
            return rule.workflow
    return rules.default


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------


@dataclass
class CharNgramVocabulary:
    terms: list[str]  # sorted lexicographically
    idf: np.ndarray
    n_lo: int
    n_hi: int
    _column: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self._column:
            self._column = {t: i for i, t in enumerate(self.terms)}

    def transform(self, texts: list[str]) -> np.ndarray:
        """tf-idf rows for new texts; unseen grams are dropped."""
        out = np.zeros((len(texts), len(self.terms)), dtype=np.float64)
        for i, text in enumerate(texts):
            for gram, count in _char_ngram_counts(text, self.n_lo, self.n_hi).items():
                col = self._column.get(gram)
                if col is not None:
                    out[i, col] = count * self.idf[col]
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
        return out


def _char_ngram_counts(text: str, n_lo: int, n_hi: int) -> dict[str, int]:
    low = text.lower()
    counts: dict[str, int] = {}
    for n in range(n_lo, n_hi + 1):
        for i in range(len(low) - n + 1):
            gram = low[i : i + n]
            counts[gram] = counts.get(gram, 0) + 1
    return counts


def featurize_char_ngrams(
    texts: list[str], n_lo: int = 3, n_hi: int = 5
) -> tuple[CharNgramVocabulary, np.ndarray]:
    """TF-IDF character n-gram matrix over lowercased text, spaces included.

    idf = ln((1 + N) / (1 + df)) + 1; rows are L2-normalized; the
    vocabulary is sorted lexicographically so the matrix is deterministic.
    """
    if not texts:
        raise ValueError("no texts to featurize")
    all_counts = [_char_ngram_counts(t, n_lo, n_hi) for t in texts]
    df: dict[str, int] = {}
    for counts in all_counts:
        for gram in counts:
            df[gram] = df.get(gram, 0) + 1
    terms = sorted(df)
    n = len(texts)
    idf = np.array(
        [math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms], dtype=np.float64
    )
    vocab = CharNgramVocabulary(terms=terms, idf=idf, n_lo=n_lo, n_hi=n_hi)
    matrix = np.zeros((n, len(terms)), dtype=np.float64)
    for i, counts in enumerate(all_counts):
        for gram, count in counts.items():
            col = vocab._column[gram]
            matrix[i, col] = count * idf[col]
        norm = np.linalg.norm(matrix[i])
        if norm > 0:
            matrix[i] /= norm
    return vocab, matrix


_SURFACE_FEATURES = (
    "char_count",
    "word_count",
    "has_question_mark",
    "interrogative_count",
    "stopword_ratio",
    "mean_word_length",
)


def featurize_surface(text: str, stopwords: frozenset[str] | None = None) -> dict[str, float]:
    """Surface statistics of a query: counts, question marks, stop-word ratio."""
    if stopwords is None:
        stopwords = load_stopwords()
    tokens = tokenize(text)
    n = len(tokens)
    return {
        "char_count": float(len(text)),
        "word_count": float(n),
        "has_question_mark": 1.0 if "?" in text else 0.0,
        "interrogative_count": float(sum(t in DANISH_INTERROGATIVES for t in tokens)),
        "stopword_ratio": (sum(t in stopwords for t in tokens) / n) if n else 0.0,
        "mean_word_length": (sum(len(t) for t in tokens) / n) if n else 0.0,
    }


# ---------------------------------------------------------------------------
# Linear classifier (multinomial logistic regression)
# ---------------------------------------------------------------------------


@dataclass
class LinearClassifier:
    classes: list[str]
    weights: np.ndarray  # (classes, features)
    biases: np.ndarray  # (classes,)

    def decision(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.biases

    def predict(self, features: np.ndarray) -> list[str]:
        logits = self.decision(np.atleast_2d(features))
        return [self.classes[int(i)] for i in np.argmax(logits, axis=1)]


def train_linear_classifier(
    features: np.ndarray,
    labels: list[str],
    l2: float = 1e-4,
    seed: int = 0,
    lr: float = 1.0,
    max_iter: int = 2000,
    tol: float = 1e-6,
) -> LinearClassifier:
    """Full-batch gradient descent on the multinomial cross-entropy.

    Zero initialization plus fixed iteration order make training
    deterministic for a given seed and data order; the seed is kept in
    the signature for interface stability but the optimizer itself is
    deterministic.
    """
    del seed  # deterministic regardless; see docstring
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    class_index = {c: i for i, c in enumerate(classes)}
    n, n_features = features.shape
    y = np.zeros((n, len(classes)), dtype=np.float64)
    for i, lab in enumerate(labels):
        y[i, class_index[lab]] = 1.0
    w = np.zeros((len(classes), n_features), dtype=np.float64)
    b = np.zeros(len(classes), dtype=np.float64)
    # keep the step inside the smoothness bound of the worst row
    max_sq = float((features**2).sum(axis=1).max()) + 1.0
    lr = lr / max(1.0, max_sq)
    for _ in range(max_iter):
        logits = features @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        err = (probs - y) / n
        grad_w = err.T @ features + l2 * w
        grad_b = err.sum(axis=0)
        w -= lr * grad_w
        b -= lr * grad_b
        if max(float(np.abs(grad_w).max()), float(np.abs(grad_b).max())) < tol:
            break
    return LinearClassifier(classes=classes, weights=w, biases=b)


# ---------------------------------------------------------------------------
# Ridge delta-router
# ---------------------------------------------------------------------------


@dataclass
class RidgeRouter:
    """Per-workflow score regressors plus the substitution margin delta.

    The router defaults to the most expensive workflow in cost_order and
    substitutes the cheapest alternative whose predicted score beats the
    default's by at least delta.
    """

    weights: dict[str, np.ndarray]
    biases: dict[str, float]
    delta: float
    cost_order: tuple[str, ...] = WORKFLOW_IDS

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        missing = [w for w in self.cost_order if w not in self.weights]
        if missing:
            raise ValueError(f"missing regressors for {missing}")

    def predict_scores(self, features: np.ndarray) -> dict[str, float]:
        return {
            w: float(features @ self.weights[w] + self.biases[w])
            for w in self.cost_order
        }


def _ridge_fit(x: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    """Closed-form ridge with an unpenalized intercept.

    Solves in the dual when features outnumber samples; the two forms
    are algebraically identical.
    """
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    yc = y - y_mean
    n, d = xc.shape
    if d <= n:
        w = np.linalg.solve(xc.T @ xc + l2 * np.eye(d), xc.T @ yc)
    else:
        w = xc.T @ np.linalg.solve(xc @ xc.T + l2 * np.eye(n), yc)
    b = y_mean - float(x_mean @ w)
    return w, b


def _stratified_folds(
    labels: list[str], n_folds: int, seed: int
) -> list[np.ndarray]:
    """Seeded round-robin fold assignment, stratified by label."""
    rng = random.Random(seed)
    by_label: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    assignment = np.zeros(len(labels), dtype=np.int64)
    cursor = 0
    for lab in sorted(by_label):
        idx = by_label[lab]
        rng.shuffle(idx)
        for i in idx:
            assignment[i] = cursor % n_folds
            cursor += 1
    return [np.where(assignment == f)[0] for f in range(n_folds)]


def train_ridge_router(
    features: np.ndarray,
    co_by_workflow: dict[str, np.ndarray],
    delta: float,
    strata: list[str],
    l2_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0),
    n_folds: int = 5,
    seed: int = 0,
    cost_order: tuple[str, ...] = WORKFLOW_IDS,
) -> RidgeRouter:
    """Fit one ridge regressor per workflow, picking each L2 strength by
    seeded stratified cross-validation on the training folds."""
    folds = _stratified_folds(strata, n_folds, seed)
    weights: dict[str, np.ndarray] = {}
    biases: dict[str, float] = {}
    for wid in cost_order:
        y = co_by_workflow[wid]
        best_l2, best_mse = None, math.inf
        for l2 in l2_grid:
            mse_total, count = 0.0, 0
            for fold in folds:
                if len(fold) == 0 or len(fold) == len(y):
                    continue
                train_mask = np.ones(len(y), dtype=bool)
                train_mask[fold] = False
                w, b = _ridge_fit(features[train_mask], y[train_mask], l2)
                pred = features[fold] @ w + b
                mse_total += float(((pred - y[fold]) ** 2).sum())
                count += len(fold)
            mse = mse_total / count if count else math.inf
            if mse < best_mse:
                best_mse, best_l2 = mse, l2
        w, b = _ridge_fit(features, y, best_l2)
        weights[wid] = w
        biases[wid] = b
    return RidgeRouter(
        weights=weights, biases=biases, delta=delta, cost_order=cost_order
    )


def ridge_route(router: RidgeRouter, features: np.ndarray) -> str:
    """Cheapest workflow whose predicted score beats the default by delta.

    The default is the last (most expensive) workflow in cost order;
    with a large enough delta the router degenerates to always-default.
    """
    scores = router.predict_scores(features)
    anchor = router.cost_order[-1]
    for wid in router.cost_order[:-1]:
        if scores[wid] - scores[anchor] >= router.delta:
            return wid
    return anchor


# ---------------------------------------------------------------------------
# Router wrappers and evaluation
# ---------------------------------------------------------------------------


class Router(Protocol):
    def route(self, query: Query) -> str: ...


@dataclass(frozen=True)
class AlwaysRouter:
    workflow: str

    def route(self, query: Query) -> str:
        return self.workflow


@dataclass(frozen=True)
class RuleRouter:
    rules: RuleSet

    def route(self, query: Query) -> str:
        return rule_route(query, self.rules)


@dataclass(frozen=True)
class OracleRouter:
    labels: dict[str, str]  # query_id -> workflow

    def route(self, query: Query) -> str:
        return self.labels[query.query_id]


@dataclass(frozen=True)
class LinearRouter:
    vocab: CharNgramVocabulary
    model: LinearClassifier

    def route(self, query: Query) -> str:
        return self.model.predict(self.vocab.transform([query.text]))[0]


@dataclass(frozen=True)
class RidgeQueryRouter:
    vocab: CharNgramVocabulary
    model: RidgeRouter

    def route(self, query: Query) -> str:
        return ridge_route(self.model, self.vocab.transform([query.text])[0])


@dataclass(frozen=True)
class RouterReport:
    routed_co: float
    augmentation_free_rate: float
    oracle_gap_recovered: float | None
    mean_cost: float | None = None


def evaluate_router(
    router: Router,
    queries: list[Query],
    records: list[EvalRecord],
    cost_table: dict[str, float] | None = None,
    cost_order: tuple[str, ...] = WORKFLOW_IDS,
) -> RouterReport:
    """Score a router against a recorded log with co for every workflow.

    oracle_gap_recovered is the routed advantage over always-default
    (the most expensive workflow) as a fraction of the oracle's
    advantage; None when the oracle has no advantage to recover.
    """
    co: dict[tuple[str, str], float] = {}
    for r in records:
        if r.workflow in cost_order:
            co[(r.query_id, r.workflow)] = r.co
    for q in queries:
        missing = [w for w in cost_order if (q.query_id, w) not in co]
        if missing:
            raise ValueError(f"query {q.query_id!r} missing workflow rows: {missing}")
    if not queries:
        raise ValueError("no queries")
    anchor = cost_order[-1]
    routed, costs, tier1 = [], [], 0
    for q in queries:
        wid = router.route(q)
        if wid not in cost_order:
            raise ValueError(f"router chose unknown workflow {wid!r}")
        routed.append(co[(q.query_id, wid)])
        if wid in TIER1_WORKFLOWS:
            tier1 += 1
        if cost_table is not None:
            costs.append(cost_table[wid])
    routed_co = sum(routed) / len(routed)
    hyde_co = sum(co[(q.query_id, anchor)] for q in queries) / len(queries)
    oracle_co = sum(
        max(co[(q.query_id, w)] for w in cost_order) for q in queries
    ) / len(queries)
    gap = oracle_co - hyde_co
    recovered = (routed_co - hyde_co) / gap if gap > 1e-12 else None
    return RouterReport(
        routed_co=routed_co,
        augmentation_free_rate=tier1 / len(queries),
        oracle_gap_recovered=recovered,
        mean_cost=(sum(costs) / len(costs)) if cost_table is not None else None,
    )


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------


def save_router(path: str | Path, router: Router) -> None:
    """Persist a router as versioned JSON."""
    if isinstance(router, RuleRouter):
        payload = {
            "format": MODEL_FORMAT,
            "kind": "rules",
            "rules": [[r.name, r.workflow] for r in router.rules.rules],
            "default": router.rules.default,
        }
    elif isinstance(router, LinearRouter):
        payload = {
            "format": MODEL_FORMAT,
            "kind": "linear",
            "vocabulary": router.vocab.terms,
            "idf": router.vocab.idf.tolist(),
            "n_lo": router.vocab.n_lo,
            "n_hi": router.vocab.n_hi,
            "classes": router.model.classes,
            "weights": router.model.weights.tolist(),
            "biases": router.model.biases.tolist(),
        }
    elif isinstance(router, RidgeQueryRouter):
        payload = {
            "format": MODEL_FORMAT,
            "kind": "ridge",
            "vocabulary": router.vocab.terms,
            "idf": router.vocab.idf.tolist(),
            "n_lo": router.vocab.n_lo,
            "n_hi": router.vocab.n_hi,
            "delta": router.model.delta,
            "cost_order": list(router.model.cost_order),
            "weights": {w: v.tolist() for w, v in router.model.weights.items()},
            "biases": router.model.biases,
        }
    else:
        raise ValueError(f"cannot persist router of type {type(router).__name__}")
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=None), encoding="utf-8"
    )


def load_router(path: str | Path) -> Router:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"unknown model format {payload.get('format')!r}")
    kind = payload["kind"]
    if kind == "rules":
        return RuleRouter(
            RuleSet(
                rules=tuple(Rule(name, wid) for name, wid in payload["rules"]),
                default=payload["default"],
            )
        )
    vocab = CharNgramVocabulary(
        terms=list(payload["vocabulary"]),
        idf=np.array(payload["idf"], dtype=np.float64),
        n_lo=int(payload["n_lo"]),
        n_hi=int(payload["n_hi"]),
    )
    if kind == "linear":
        return LinearRouter(
            vocab=vocab,
            model=LinearClassifier(
                classes=list(payload["classes"]),
                weights=np.array(payload["weights"], dtype=np.float64),
                biases=np.array(payload["biases"], dtype=np.float64),
            ),
        )
    if kind == "ridge":
        return RidgeQueryRouter(
            vocab=vocab,
            model=RidgeRouter(
                weights={
                    w: np.array(v, dtype=np.float64)
                    for w, v in payload["weights"].items()
                },
                biases={w: float(v) for w, v in payload["biases"].items()},
                delta=float(payload["delta"]),
                cost_order=tuple(payload["cost_order"]),
            ),
        )
    raise ValueError(f"unknown router kind {kind!r}")
