"""Scored result lists, the currency passed between retrieval stages."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RankedList:
    """Chunk ids with scores, strictly ordered by (score desc, id asc).

    Use :func:`ranked` to build one from unordered pairs; the constructor
    trusts its input ordering.
    """

    items: tuple[tuple[str, float], ...] = ()
    source_stage: str = ""

    def __len__(self) -> int:
        return len(self.items)

    def __bool__(self) -> bool:
        return bool(self.items)

    def ids(self) -> list[str]:
        return [cid for cid, _ in self.items]

    def truncate(self, k: int) -> "RankedList":
        return RankedList(self.items[:k], self.source_stage)


def ranked(pairs: list[tuple[str, float]], stage: str = "") -> RankedList:
    """Sort (chunk_id, score) pairs into a RankedList.

    Descending score, ascending chunk_id on ties; duplicate ids rejected.
    """
    ids = [cid for cid, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate chunk ids in ranked list")
    ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
    return RankedList(tuple(ordered), stage)
