"""Document ingestion, chunking, and the shared tokenizer.

Both the lexical and the dense index run on the same tokenizer so that
"no lexical overlap" and "no dense signal" mean the same thing for a
given piece of text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

QUERY_CONDITIONS = (
    "real_user",
    "synth_polluted",
    "synth_keywords",
    "synth_conversational",
    "unlabeled",
)

# Unicode alphanumeric runs; underscore and all punctuation are boundaries.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_PARA_SPLIT_RE = re.compile(r"\n\s*\n")


class CorpusError(Exception):
    """Raised on malformed corpus/query files or invariant violations."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    url: str | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise CorpusError("document with empty doc_id")
        if not self.body:
            raise CorpusError(f"document {self.doc_id!r} has empty body")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    parent_doc_id: str
    text: str
    ordinal: int
    token_count: int


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    condition: str = "unlabeled"

    def __post_init__(self) -> None:
        if not self.text:
            raise CorpusError(f"query {self.query_id!r} has empty text")
        if self.condition not in QUERY_CONDITIONS:
            raise CorpusError(
                f"query {self.query_id!r} has unknown condition {self.condition!r}"
            )


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens split on non-alphanumeric boundaries.

    Unicode letters (æ, ø, å, ...) are preserved; no stemming, no
    stop-word removal. Empty input yields an empty list.
    """
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


class CorpusStore:
    """Immutable document collection; safe for concurrent reads."""

    def __init__(self, documents: list[Document]):
        self._docs = list(documents)
        self._by_id = {d.doc_id: d for d in self._docs}
        if len(self._by_id) != len(self._docs):
            raise CorpusError("duplicate doc_id in document list")

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs)

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id


def ingest_corpus(path: str | Path) -> CorpusStore:
    """Load a newline-delimited corpus file (one JSON document per line).

    Each record carries id/title/text/url. Parse errors cite the
    1-based line number; duplicate ids cite the id.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = Document(
                    doc_id=str(rec["id"]),
                    title=str(rec.get("title", "")),
                    body=str(rec["text"]),
                    url=rec.get("url"),
                )
            except CorpusError:
                raise
            except Exception as exc:
                raise CorpusError(f"parse error on line {lineno}: {exc}") from exc
            if doc.doc_id in seen:
                raise CorpusError(
                    f"duplicate doc_id {doc.doc_id!r} on line {lineno}"
                )
            seen.add(doc.doc_id)
            docs.append(doc)
    return CorpusStore(docs)


def load_queries(path: str | Path) -> list[Query]:
    """Load a newline-delimited query file with id/text/condition fields."""
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                q = Query(
                    query_id=str(rec["id"]),
                    text=str(rec["text"]),
                    condition=rec.get("condition", "unlabeled"),
                )
            except CorpusError:
                raise
            except Exception as exc:
                raise CorpusError(f"parse error on line {lineno}: {exc}") from exc
            if q.query_id in seen:
                raise CorpusError(f"duplicate query id {q.query_id!r} on line {lineno}")
            seen.add(q.query_id)
            queries.append(q)
    return queries


def chunk_document(doc: Document, max_tokens: int = 512) -> list[Chunk]:
    """Split a document body into chunks on paragraph boundaries.

    Each paragraph becomes one chunk; a paragraph longer than
    max_tokens is split at token boundaries into greedy max_tokens
    pieces. Concatenating chunk texts in ordinal order reproduces the
    body modulo paragraph separators, and the multiset of tokens over
    all chunks equals tokenize(body).
    """
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    chunks: list[Chunk] = []
    ordinal = 0
    for para in _PARA_SPLIT_RE.split(doc.body):
        para = para.strip()
        if not para:
            continue
        for piece in _split_paragraph(para, max_tokens):
            n_tokens = len(tokenize(piece))
            if n_tokens == 0:
                continue
            chunks.append(
                Chunk(
                    chunk_id=f"{doc.doc_id}#{ordinal}",
                    parent_doc_id=doc.doc_id,
                    text=piece,
                    ordinal=ordinal,
                    token_count=n_tokens,
                )
            )
            ordinal += 1
    return chunks


def _split_paragraph(para: str, max_tokens: int) -> Iterator[str]:
    spans = [m.span() for m in _TOKEN_RE.finditer(para)]
    if len(spans) <= max_tokens:
        yield para
        return
    # Cut at the start of the first token of each subsequent block so no
    # token is ever bisected and the pieces concatenate back to para.
    start = 0
    for block_start in range(max_tokens, len(spans), max_tokens):
        cut = spans[block_start][0]
        yield para[start:cut]
        start = cut
    yield para[start:]


def chunk_corpus(
    store: CorpusStore, max_tokens: int = 512, index_titles: bool = True
) -> list[Chunk]:
    """Chunk every document in a corpus store.

    With index_titles, the title is prepended to each document's first
    chunk so title terms are searchable in both indexes.
    """
    out: list[Chunk] = []
    for doc in store:
        chunks = chunk_document(doc, max_tokens=max_tokens)
        if index_titles and doc.title and chunks:
            first = chunks[0]
            text = f"{doc.title}\n{first.text}"
            chunks[0] = Chunk(
                chunk_id=first.chunk_id,
                parent_doc_id=first.parent_doc_id,
                text=text,
                ordinal=first.ordinal,
                token_count=len(tokenize(text)),
            )
        out.extend(chunks)
    return out
