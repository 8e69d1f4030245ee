"""The five retrieval workflows, composed from fusion, reranking, and
query-transformation stages.

Tier 1 (semantic, semantic_ce, hybrid) searches the indexes directly.
Tier 2 (qe_ce, hyde) first transforms the query, by default with the
offline LLM-free transformers (pseudo-relevance expansion and a fixed
hypothetical-document template) so the whole pipeline runs with no
network; live LLM transformers are drop-in via TransformerSpec.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

from .clients import chat_complete
from .corpus import Chunk, Query, tokenize
from .dense import DenseIndex, EmbedderSpec, build_dense_index, dense_search, embed_text
from .lexical import Bm25Params, InvertedIndex, bm25_idf, build_lexical_index, lexical_search
from .ranking import RankedList, ranked

WORKFLOW_IDS = ("semantic", "semantic_ce", "hybrid", "qe_ce", "hyde")
COST_RANK = {wid: i for i, wid in enumerate(WORKFLOW_IDS)}
TIER2_WORKFLOWS = frozenset({"qe_ce", "hyde"})
TIER1_WORKFLOWS = frozenset(WORKFLOW_IDS) - TIER2_WORKFLOWS

TRANSFORMER_KINDS = (
    "identity",
    "prf_expansion",
    "llm_expansion",
    "template_hyde",
    "llm_hyde",
)

DEFAULT_HYDE_TEMPLATE = (
    "{query}. {query} beskrives her i en kort encyklopædisk artikel. "
    "Emnet {query} omfatter baggrund, centrale begreber og betydning."
)

DEFAULT_PRF_TERMS = 5


class StageError(Exception):
    """A workflow stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def render_template(template: str, query_text: str) -> str:
    # plain replacement, not str.format: templates may contain literal braces
    return template.replace("{query}", query_text)


@dataclass(frozen=True)
class TransformerSpec:
    kind: str = "identity"
    endpoint: str | None = None
    model_name: str | None = None
    prompt_template: str | None = None
    prf_terms: int | None = None
    timeout_s: float = 30.0
    retries: int = 2

    def __post_init__(self) -> None:
        if self.kind not in TRANSFORMER_KINDS:
            raise ValueError(f"unknown transformer kind {self.kind!r}")
        if self.kind in ("llm_expansion", "llm_hyde"):
            if not (self.endpoint and self.prompt_template):
                raise ValueError(f"{self.kind} requires endpoint and prompt_template")
        if self.prf_terms is not None and self.prf_terms < 1:
            raise ValueError("prf_terms must be positive")


@dataclass(frozen=True)
class WorkflowConfig:
    k: int = 10
    tau: float = 0.80
    rrf_k: int = 60
    bm25: Bm25Params = field(default_factory=Bm25Params)
    expansion: TransformerSpec = field(
        default_factory=lambda: TransformerSpec(kind="prf_expansion")
    )
    hyde: TransformerSpec = field(
        default_factory=lambda: TransformerSpec(kind="template_hyde")
    )

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.rrf_k < 1:
            raise ValueError("rrf_k must be >= 1")


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    workflow: str
    docs: RankedList
    has_sources: bool
    step_latency: float
    transformer_output: str | None = None


@dataclass
class SearchIndexes:
    """Everything a workflow needs: both indexes plus chunk text/title lookups."""

    lexical: InvertedIndex
    dense: DenseIndex
    embedder: EmbedderSpec
    chunk_texts: dict[str, str]
    chunk_titles: dict[str, str] = field(default_factory=dict)


def build_search_indexes(
    chunks: list[Chunk],
    embedder: EmbedderSpec | None = None,
    titles: dict[str, str] | None = None,
) -> SearchIndexes:
    embedder = embedder or EmbedderSpec()
    titles = titles or {}
    return SearchIndexes(
        lexical=build_lexical_index(chunks),
        dense=build_dense_index(chunks, embedder),
        embedder=embedder,
        chunk_texts={c.chunk_id: c.text for c in chunks},
        chunk_titles={c.chunk_id: titles.get(c.parent_doc_id, "") for c in chunks},
    )


class Reranker(Protocol):
    def score(self, query_text: str, chunk_text: str) -> float: ...


class JaccardReranker:
    """Mock cross-encoder: token-overlap Jaccard between query and chunk."""

    def score(self, query_text: str, chunk_text: str) -> float:
        q = set(tokenize(query_text))
        c = set(tokenize(chunk_text))
        if not q or not c:
            return 0.0
        return len(q & c) / len(q | c)


def rrf_fuse(lists: list[RankedList], rrf_k: int) -> RankedList:
    """Reciprocal rank fusion: score(d) = sum over lists of 1/(rrf_k + rank).

    Ranks start at 1 within each input list.
    """
    if not lists:
        raise ValueError("rrf_fuse requires at least one list")
    if rrf_k < 1:
        raise ValueError("rrf_k must be >= 1")
    scores: dict[str, float] = {}
    for rl in lists:
        for rank, (chunk_id, _score) in enumerate(rl.items, start=1):
            scores[chunk_id] = scores.get(chunk_id, 0.0) + 1.0 / (rrf_k + rank)
    return ranked(list(scores.items()), stage="rrf")


def rerank(
    candidates: RankedList,
    query: Query,
    scorer: Reranker,
    chunk_texts: dict[str, str],
) -> RankedList:
    """Rescore candidates with the cross-encoder interface.

    The retrieval scores are replaced, not blended.
    """
    if not candidates:
        raise ValueError("nothing to rerank")
    pairs = [
        (chunk_id, float(scorer.score(query.text, chunk_texts[chunk_id])))
        for chunk_id, _ in candidates.items
    ]
    return ranked(pairs, stage="rerank")


def expand_query(
    spec: TransformerSpec,
    query: Query,
    index: InvertedIndex,
    params: Bm25Params | None = None,
) -> str:
    """Expand a query with related terms; the original text stays a prefix.

    prf_expansion appends the highest-contribution terms (summed BM25
    contribution over the top-3 lexical results of the raw query); with
    zero lexical hits the query is returned unchanged. llm_expansion
    appends the endpoint's completion.
    """
    if spec.kind not in ("prf_expansion", "llm_expansion"):
        raise ValueError(f"expand_query does not support kind {spec.kind!r}")
    if spec.kind == "llm_expansion":
        prompt = render_template(spec.prompt_template, query.text)
        completion = chat_complete(
            spec.endpoint,
            spec.model_name or "expansion",
            prompt,
            timeout=spec.timeout_s,
            retries=spec.retries,
        )
        return f"{query.text} {completion}".rstrip()

    params = params or Bm25Params()
    top = lexical_search(index, params, query, k=3)
    if not top:
        return query.text
    top_ids = set(top.ids())
    query_tokens = set(tokenize(query.text))
    contributions: dict[str, float] = {}
    for term, plist in index.postings.items():
        if term in query_tokens:
            continue
        for chunk_id, tf in plist:
            if chunk_id not in top_ids:
                continue
            length = index.chunk_lengths[chunk_id]
            norm = params.k1 * (
                1.0 - params.b + params.b * length / index.avg_chunk_length
            )
            contributions[term] = contributions.get(term, 0.0) + (
                bm25_idf(index, term) * tf * (params.k1 + 1.0) / (tf + norm)
            )
    if not contributions:
        return query.text
    n_terms = spec.prf_terms or DEFAULT_PRF_TERMS
    chosen = sorted(contributions.items(), key=lambda kv: (-kv[1], kv[0]))[:n_terms]
    return f"{query.text} {' '.join(term for term, _ in chosen)}"


def generate_hypothetical_doc(spec: TransformerSpec, query: Query) -> str:
    """Produce the hypothetical answer document whose embedding drives HyDE."""
    if spec.kind not in ("template_hyde", "llm_hyde"):
        raise ValueError(f"generate_hypothetical_doc does not support kind {spec.kind!r}")
    if spec.kind == "template_hyde":
        return render_template(spec.prompt_template or DEFAULT_HYDE_TEMPLATE, query.text)
    prompt = render_template(spec.prompt_template, query.text)
    completion = chat_complete(
        spec.endpoint,
        spec.model_name or "hyde",
        prompt,
        timeout=spec.timeout_s,
        retries=spec.retries,
    )
    if not completion.strip():
        raise ValueError("empty completion from hypothetical-document endpoint")
    return completion


def _stage(name: str, fn):
    try:
        return fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_workflow(
    workflow: str,
    query: Query,
    config: WorkflowConfig,
    indexes: SearchIndexes,
    reranker: Reranker | None = None,
) -> RetrievalResult:
    """Execute one workflow end to end and record its wall time.

    has_sources is true iff the final ranked list is non-empty; stage
    failures propagate wrapped with the failing stage's name.
    """
    if workflow not in WORKFLOW_IDS:
        raise ValueError(f"unknown workflow {workflow!r}")
    reranker = reranker or JaccardReranker()
    transformer_output: str | None = None
    t0 = time.perf_counter()

    if workflow == "semantic":
        qvec = _stage("embed", lambda: embed_text(indexes.embedder, query.text))
        docs = _stage(
            "dense_search",
            lambda: dense_search(indexes.dense, qvec, config.k, config.tau),
        )
    elif workflow == "semantic_ce":
        qvec = _stage("embed", lambda: embed_text(indexes.embedder, query.text))
        docs = _stage(
            "dense_search",
            lambda: dense_search(indexes.dense, qvec, config.k, config.tau),
        )
        if docs:
            docs = _stage(
                "rerank",
                lambda: rerank(docs, query, reranker, indexes.chunk_texts),
            )
    elif workflow == "hybrid":
        docs = _hybrid_retrieve(query.text, query, config, indexes)
    elif workflow == "qe_ce":
        expanded = _stage(
            "expand_query",
            lambda: expand_query(config.expansion, query, indexes.lexical, config.bm25),
        )
        transformer_output = expanded
        docs = _hybrid_retrieve(expanded, query, config, indexes)
        if docs:
            docs = _stage(
                "rerank",
                lambda: rerank(docs, query, reranker, indexes.chunk_texts),
            )
    else:  # hyde
        hypothetical = _stage(
            "generate_hypothetical_doc",
            lambda: generate_hypothetical_doc(config.hyde, query),
        )
        transformer_output = hypothetical
        hvec = _stage("embed", lambda: embed_text(indexes.embedder, hypothetical))
        docs = _stage(
            "dense_search",
            lambda: dense_search(indexes.dense, hvec, config.k, config.tau),
        )

    latency = time.perf_counter() - t0
    return RetrievalResult(
        query_id=query.query_id,
        workflow=workflow,
        docs=docs,
        has_sources=bool(docs),
        step_latency=latency,
        transformer_output=transformer_output,
    )


def _hybrid_retrieve(
    search_text: str, query: Query, config: WorkflowConfig, indexes: SearchIndexes
) -> RankedList:
    """BM25 and dense lists fused with RRF, truncated to k."""
    search_query = Query(query.query_id, search_text, query.condition)
    lex = _stage(
        "lexical_search",
        lambda: lexical_search(indexes.lexical, config.bm25, search_query, config.k),
    )
    qvec = _stage("embed", lambda: embed_text(indexes.embedder, search_text))
    den = _stage(
        "dense_search",
        lambda: dense_search(indexes.dense, qvec, config.k, config.tau),
    )
    fused = _stage("rrf_fuse", lambda: rrf_fuse([lex, den], config.rrf_k))
    return fused.truncate(config.k)
