"""Cost-ordered retrieval cascade engine with an evaluation and routing workbench."""

from .cascade import (
    CascadeConfig,
    CascadeTrace,
    escalation_indicator,
    expected_cascade_cost,
    run_cascade,
)
from .corpus import Chunk, Document, Query, chunk_document, ingest_corpus, tokenize
from .dense import DenseIndex, EmbedderSpec, Embedding, dense_search, embed_text
from .evaluation import (
    AggregateReport,
    EvalRecord,
    JudgeScores,
    ParetoPoint,
    aggregate,
    composite_overall,
    decompose_advantage,
    head_to_head,
    pareto_frontier,
    r2_coverage,
    r2_sensitivity,
    wilcoxon_signed_rank,
)
from .lexical import Bm25Params, InvertedIndex, bm25_score, build_lexical_index, lexical_search
from .ranking import RankedList, ranked
from .routing import build_oracle_labels, evaluate_router, ridge_route, rule_route
from .workflows import (
    WORKFLOW_IDS,
    JaccardReranker,
    RetrievalResult,
    SearchIndexes,
    TransformerSpec,
    WorkflowConfig,
    build_search_indexes,
    rrf_fuse,
    run_workflow,
)

__version__ = "0.1.0"
