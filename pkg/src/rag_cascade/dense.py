"""Embeddings and exact top-k cosine search; the dense half of every workflow.

The production embedding model sits behind an HTTP interface. Offline runs
use a deterministic feature-hash mock: character 3-grams of the tokenized
text hashed into a fixed number of buckets, counted, and L2-normalized.

Search is exhaustive (no ANN) and applies a similarity floor tau, so a
query that matches nothing well returns an empty list instead of k noisy
neighbors. An empty dense result is one of the two signals that lets the
cascade escalate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Chunk, tokenize
from .clients import embed_remote
from .ranking import RankedList, ranked

DEFAULT_DIMENSION = 256
DEFAULT_TAU = 0.80

_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619
_MASK32 = 0xFFFFFFFF


class UnembeddableTextError(ValueError):
    """Text produced no character 3-grams, so no vector can be formed."""


@dataclass(frozen=True)
class Embedding:
    """Unit-normalized vector; similarity is a plain inner product."""

    vector: np.ndarray

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"embedding norm {norm} not within 1e-6 of 1.0")

    @property
    def dimension(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "feature_hash_mock"  # or "external_endpoint"
    dimension: int = DEFAULT_DIMENSION
    endpoint: str | None = None
    model_name: str | None = None
    timeout_s: float = 10.0
    retries: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("feature_hash_mock", "external_endpoint"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "external_endpoint" and not (self.endpoint and self.model_name):
            raise ValueError("external_endpoint requires endpoint and model_name")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


@dataclass
class DenseIndex:
    ids: list[str]
    matrix: np.ndarray  # shape (n, dimension), unit row norms
    dimension: int

    def __len__(self) -> int:
        return len(self.ids)

    def entries(self) -> list[tuple[str, np.ndarray]]:
        return [(cid, self.matrix[i]) for i, cid in enumerate(self.ids)]


def _fnv1a(gram: str) -> int:
    h = _FNV_OFFSET
    for ch in gram:
        h = ((h ^ ord(ch)) * _FNV_PRIME) & _MASK32
    return h


def embed_text(spec: EmbedderSpec, text: str) -> Embedding:
    """Embed text with the configured embedder; the feature-hash mock is
    fully deterministic."""
    if spec.kind == "external_endpoint":
        if not text:
            raise ValueError("external embedder requires non-empty text")
        raw = np.asarray(
            embed_remote(
                spec.endpoint,
                spec.model_name,
                text,
                timeout=spec.timeout_s,
                retries=spec.retries,
            ),
            dtype=np.float64,
        )
        norm = float(np.linalg.norm(raw))
        if norm == 0.0:
            raise UnembeddableTextError("unembeddable text: zero vector from endpoint")
        return Embedding(raw / norm)

    joined = " ".join(tokenize(text))
    vec = np.zeros(spec.dimension, dtype=np.float64)
    for i in range(len(joined) - 2):
        bucket = _fnv1a(joined[i : i + 3]) % spec.dimension
        vec[bucket] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise UnembeddableTextError("unembeddable text: no character 3-grams")
    return Embedding(vec / norm)


def build_dense_index(chunks: list[Chunk], spec: EmbedderSpec) -> DenseIndex:
    if not chunks:
        raise ValueError("empty corpus")
    ids = [c.chunk_id for c in chunks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate chunk id in dense index input")
    rows = []
    for chunk in chunks:
        try:
            rows.append(embed_text(spec, chunk.text).vector)
        except UnembeddableTextError as exc:
            raise UnembeddableTextError(
                f"chunk {chunk.chunk_id!r}: {exc}"
            ) from exc
    return DenseIndex(ids=ids, matrix=np.vstack(rows), dimension=spec.dimension)


def dense_search(
    index: DenseIndex, query_vec: Embedding, k: int, tau: float = DEFAULT_TAU
) -> RankedList:
    """Exact top-k by cosine similarity, excluding entries below tau."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if query_vec.dimension != index.dimension:
        raise ValueError(
            f"dimension mismatch: query {query_vec.dimension}, index {index.dimension}"
        )
    sims = index.matrix @ query_vec.vector
    pairs = [
        (cid, float(sims[i])) for i, cid in enumerate(index.ids) if sims[i] >= tau
    ]
    return ranked(pairs, stage="dense").truncate(k)
