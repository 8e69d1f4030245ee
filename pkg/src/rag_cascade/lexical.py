"""Inverted index with BM25 scoring; the lexical half of hybrid retrieval.

The idf uses ln(1 + (N - df + 0.5)/(df + 0.5)), which is never negative,
so a chunk sharing no term with the query scores exactly 0 and is
excluded from results. That zero-overlap => empty-result behaviour is
what the cascade's escalation check relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import Chunk, Query, tokenize
from .ranking import RankedList, ranked


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError("k1 must be non-negative")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_freq: dict[str, int]
    chunk_lengths: dict[str, int]
    avg_chunk_length: float
    num_chunks: int
    # chunk_id -> term frequency lookup, derived from postings at build time
    _tf: dict[str, dict[str, int]] = field(repr=False, default_factory=dict)

    def term_frequency(self, term: str, chunk_id: str) -> int:
        return self._tf.get(term, {}).get(chunk_id, 0)


def build_lexical_index(chunks: list[Chunk]) -> InvertedIndex:
    """Build an inverted index; contents are independent of input order."""
    if not chunks:
        raise ValueError("empty corpus")
    seen: set[str] = set()
    counts: dict[str, dict[str, int]] = {}
    lengths: dict[str, int] = {}
    for chunk in chunks:
        if chunk.chunk_id in seen:
            raise ValueError(f"duplicate chunk id {chunk.chunk_id!r}")
        seen.add(chunk.chunk_id)
        tokens = tokenize(chunk.text)
        lengths[chunk.chunk_id] = len(tokens)
        for tok in tokens:
            per_chunk = counts.setdefault(tok, {})
            per_chunk[chunk.chunk_id] = per_chunk.get(chunk.chunk_id, 0) + 1
    postings = {
        term: sorted(per_chunk.items()) for term, per_chunk in sorted(counts.items())
    }
    doc_freq = {term: len(plist) for term, plist in postings.items()}
    avg = sum(lengths.values()) / len(lengths)
    return InvertedIndex(
        postings=postings,
        doc_freq=doc_freq,
        chunk_lengths=lengths,
        avg_chunk_length=avg,
        num_chunks=len(lengths),
        _tf={term: dict(plist) for term, plist in postings.items()},
    )


def bm25_idf(index: InvertedIndex, term: str) -> float:
    df = index.doc_freq.get(term, 0)
    return math.log(1.0 + (index.num_chunks - df + 0.5) / (df + 0.5))


def bm25_score(
    index: InvertedIndex,
    params: Bm25Params,
    query_tokens: list[str],
    chunk_id: str,
) -> float:
    """BM25 score of one chunk against a token list.

    Terms absent from the chunk contribute 0; duplicated query tokens
    contribute once per occurrence.
    """
    if chunk_id not in index.chunk_lengths:
        raise KeyError(f"unknown chunk id {chunk_id!r}")
    length = index.chunk_lengths[chunk_id]
    norm = params.k1 * (1.0 - params.b + params.b * length / index.avg_chunk_length)
    score = 0.0
    for tok in query_tokens:
        tf = index.term_frequency(tok, chunk_id)
        if tf == 0:
            continue
        score += bm25_idf(index, tok) * tf * (params.k1 + 1.0) / (tf + norm)
    return score


def lexical_search(
    index: InvertedIndex, params: Bm25Params, query: Query, k: int
) -> RankedList:
    """Top-k chunks by BM25, zero-score chunks excluded.

    A query sharing no token with the corpus returns an empty list,
    which is exactly the signal the cascade escalates on.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = tokenize(query.text)
    candidates: set[str] = set()
    for tok in set(tokens):
        for chunk_id, _tf in index.postings.get(tok, ()):
            candidates.add(chunk_id)
    scored = []
    for chunk_id in candidates:
        s = bm25_score(index, params, tokens, chunk_id)
        if s > 0.0:
            scored.append((chunk_id, s))
    return ranked(scored, stage="bm25").truncate(k)
