"""On-disk formats: index directory, chunk files, and retrieval result logs.

Every file carries a format version so stale artifacts fail loudly
instead of deserializing into garbage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import CascadeStep, CascadeTrace
from .corpus import Chunk
from .dense import DenseIndex, EmbedderSpec
from .lexical import InvertedIndex
from .workflows import RetrievalResult, SearchIndexes

LEXICAL_FORMAT = "lexical-index@1"
DENSE_FORMAT = "dense-index@1"
META_FORMAT = "index-dir@1"
RESULT_FORMAT = "result-log@1"


class PersistError(Exception):
    """Unreadable or version-mismatched artifact file."""


def _check_format(payload: dict, expected: str, path: Path) -> None:
    got = payload.get("format")
    if got != expected:
        raise PersistError(f"{path}: expected format {expected!r}, got {got!r}")


def save_chunks(chunks: list[Chunk], titles: dict[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(
                json.dumps(
                    {
                        "chunk_id": c.chunk_id,
                        "doc_id": c.parent_doc_id,
                        "ordinal": c.ordinal,
                        "text": c.text,
                        "token_count": c.token_count,
                        "title": titles.get(c.parent_doc_id, ""),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_chunks(path: str | Path) -> tuple[list[Chunk], dict[str, str]]:
    chunks: list[Chunk] = []
    titles: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                chunks.append(
                    Chunk(
                        chunk_id=rec["chunk_id"],
                        parent_doc_id=rec["doc_id"],
                        text=rec["text"],
                        ordinal=int(rec["ordinal"]),
                        token_count=int(rec["token_count"]),
                    )
                )
                titles[rec["doc_id"]] = rec.get("title", "")
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise PersistError(f"{path}: bad chunk record on line {lineno}: {exc}")
    return chunks, titles


def save_index_dir(out_dir: str | Path, indexes: SearchIndexes, chunks: list[Chunk]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lex = indexes.lexical
    (out / "lexical.json").write_text(
        json.dumps(
            {
                "format": LEXICAL_FORMAT,
                "num_chunks": lex.num_chunks,
                "avg_chunk_length": lex.avg_chunk_length,
                "chunk_lengths": lex.chunk_lengths,
                "doc_freq": lex.doc_freq,
                "postings": {t: [[cid, tf] for cid, tf in pl] for t, pl in lex.postings.items()},
            },
            ensure_ascii=False,
        ),
        encoding="utf-8",
    )
    (out / "dense.json").write_text(
        json.dumps(
            {
                "format": DENSE_FORMAT,
                "dimension": indexes.dense.dimension,
                "ids": indexes.dense.ids,
                "vectors": indexes.dense.matrix.tolist(),
            }
        ),
        encoding="utf-8",
    )
    doc_titles = {}
    for c in chunks:
        doc_titles[c.parent_doc_id] = indexes.chunk_titles.get(c.chunk_id, "")
    save_chunks(chunks, doc_titles, out / "chunks.jsonl")
    (out / "meta.json").write_text(
        json.dumps(
            {
                "format": META_FORMAT,
                "chunk_count": len(chunks),
                "dimension": indexes.dense.dimension,
                "embedder_kind": indexes.embedder.kind,
                "embedder_endpoint": indexes.embedder.endpoint,
                "embedder_model": indexes.embedder.model_name,
            }
        ),
        encoding="utf-8",
    )


def load_index_dir(index_dir: str | Path) -> SearchIndexes:
    root = Path(index_dir)
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    _check_format(meta, META_FORMAT, root / "meta.json")

    lex_payload = json.loads((root / "lexical.json").read_text(encoding="utf-8"))
    _check_format(lex_payload, LEXICAL_FORMAT, root / "lexical.json")
    postings = {
        t: [(cid, int(tf)) for cid, tf in pl] for t, pl in lex_payload["postings"].items()
    }
    lexical = InvertedIndex(
        postings=postings,
        doc_freq={t: int(v) for t, v in lex_payload["doc_freq"].items()},
        chunk_lengths={c: int(v) for c, v in lex_payload["chunk_lengths"].items()},
        avg_chunk_length=float(lex_payload["avg_chunk_length"]),
        num_chunks=int(lex_payload["num_chunks"]),
        _tf={t: dict(pl) for t, pl in postings.items()},
    )

    dense_payload = json.loads((root / "dense.json").read_text(encoding="utf-8"))
    _check_format(dense_payload, DENSE_FORMAT, root / "dense.json")
    dense = DenseIndex(
        ids=list(dense_payload["ids"]),
        matrix=np.array(dense_payload["vectors"], dtype=np.float64),
        dimension=int(dense_payload["dimension"]),
    )

    chunks, doc_titles = load_chunks(root / "chunks.jsonl")
    embedder = EmbedderSpec(
        kind=meta["embedder_kind"],
        dimension=dense.dimension,
        endpoint=meta.get("embedder_endpoint"),
        model_name=meta.get("embedder_model"),
    )
    return SearchIndexes(
        lexical=lexical,
        dense=dense,
        embedder=embedder,
        chunk_texts={c.chunk_id: c.text for c in chunks},
        chunk_titles={c.chunk_id: doc_titles.get(c.parent_doc_id, "") for c in chunks},
    )


# ---------------------------------------------------------------------------
# Retrieval result logs (input to the judge)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRecord:
    query_id: str
    condition: str
    query_text: str
    workflow: str  # a workflow id, or "cascade"
    has_sources: bool
    latency_s: float
    sources: tuple[tuple[str, float], ...]
    trace: dict | None = None
    transformer_output: str | None = None


def result_from_retrieval(query_text: str, condition: str, res: RetrievalResult) -> ResultRecord:
    return ResultRecord(
        query_id=res.query_id,
        condition=condition,
        query_text=query_text,
        workflow=res.workflow,
        has_sources=res.has_sources,
        latency_s=res.step_latency,
        sources=tuple(res.docs.items),
        trace=None,
        transformer_output=res.transformer_output,
    )


def write_results(records: list[ResultRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "format": RESULT_FORMAT,
                        "query_id": r.query_id,
                        "condition": r.condition,
                        "query_text": r.query_text,
                        "workflow": r.workflow,
                        "has_sources": r.has_sources,
                        "latency_s": r.latency_s,
                        "sources": [[cid, score] for cid, score in r.sources],
                        "trace": r.trace,
                        "transformer_output": r.transformer_output,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_results(path: str | Path) -> list[ResultRecord]:
    out: list[ResultRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("format") != RESULT_FORMAT:
                    raise ValueError(f"expected format {RESULT_FORMAT!r}")
                out.append(
                    ResultRecord(
                        query_id=rec["query_id"],
                        condition=rec.get("condition", "unlabeled"),
                        query_text=rec.get("query_text", ""),
                        workflow=rec["workflow"],
                        has_sources=bool(rec["has_sources"]),
                        latency_s=float(rec["latency_s"]),
                        sources=tuple((cid, float(s)) for cid, s in rec["sources"]),
                        trace=rec.get("trace"),
                        transformer_output=rec.get("transformer_output"),
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise PersistError(f"{path}: bad result record on line {lineno}: {exc}")
    return out


def trace_record(trace: CascadeTrace) -> dict:
    return {
        "steps": [
            [s.workflow, s.has_sources, s.doc_count, s.step_latency] for s in trace.steps
        ],
        "stop_index": trace.stop_index,
        "outcome": trace.outcome,
        "cumulative_latency_s": trace.cumulative_latency,
        "augmentation_used": trace.augmentation_used,
    }


def trace_from_record(query_id: str, rec: dict) -> CascadeTrace:
    return CascadeTrace(
        query_id=query_id,
        steps=tuple(
            CascadeStep(workflow=w, has_sources=bool(h), doc_count=int(d), step_latency=float(t))
            for w, h, d, t in rec["steps"]
        ),
        stop_index=rec["stop_index"],
        outcome=rec["outcome"],
        cumulative_latency=float(rec["cumulative_latency_s"]),
        augmentation_used=bool(rec["augmentation_used"]),
    )
