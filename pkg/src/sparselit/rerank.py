"""Chunk re-ranking: BM25L per query, fused by reciprocal rank fusion."""

from __future__ import annotations

from collections.abc import Hashable
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .agents import ProposedAnswer
from .index import BM25LParams, Granularity, build_index
from .textproc.chunking import Chunk


@dataclass(frozen=True)
class FusionParams:
    rrf_k: float = 60.0

    def __post_init__(self):
        if not self.rrf_k > 0:
            raise ValueError("rrf_k must be positive")


@dataclass(frozen=True)
class RankedChunk:
    chunk_id: str
    doc_id: str
    fused_score: float
    per_query_ranks: tuple[int | None, ...]


@dataclass(frozen=True)
class FusedItem:
    item_id: Hashable
    score: float
    ranks: tuple[int | None, ...]


def _chunk_index(chunks: Sequence[Chunk]):
    return build_index(((c.chunk_id, c.text) for c in chunks), Granularity.CHUNK, keep_documents=False)


def _ordered(index, query_text: str, params: BM25LParams | None) -> list[tuple[int, float]]:
    stems = list(dict.fromkeys(index.query_stems(query_text)))
    scores = index.score_all(stems, params)
    ids = index.unit_ids
    order = sorted(range(index.N), key=lambda i: (-scores[i], ids[i]))
    return [(i, float(scores[i])) for i in order]


def score_chunks(
    chunks: Sequence[Chunk], query_text: str, params: BM25LParams | None = None
) -> list[tuple[Chunk, float]]:
    """Order chunks by BM25L against ``query_text`` over an index of just these chunks.

    Query stems count once each. Zero scores sort after every positive score,
    ties by chunk_id.
    """
    if not chunks:
        raise ValueError("score_chunks needs at least one chunk")
    return [(chunks[i], score) for i, score in _ordered(_chunk_index(chunks), query_text, params)]


def rrf_fuse(rankings: Sequence[Sequence[Hashable]], params: FusionParams | None = None) -> list[FusedItem]:
    """Reciprocal rank fusion: sum of ``1 / (k + rank)`` over the rankings holding an item."""
    if not rankings:
        raise ValueError("rrf_fuse needs at least one ranking")
    k = (params or FusionParams()).rrf_k
    ranks: dict[Hashable, list[int | None]] = {}
    for q, ranking in enumerate(rankings):
        for rank, item in enumerate(ranking, start=1):
            slot = ranks.setdefault(item, [None] * len(rankings))
            if slot[q] is None:
                slot[q] = rank
    # exact rational sums: mathematically equal scores tie exactly and fall
    # back to id order, whatever order the rankings arrive in
    exact_k = Fraction(k)
    exact = {
        item: sum((1 / (exact_k + r) for r in rs if r is not None), Fraction(0)) for item, rs in ranks.items()
    }
    order = sorted(ranks, key=lambda item: (-exact[item], item))
    return [FusedItem(item, float(exact[item]), tuple(ranks[item])) for item in order]


def rerank(
    chunks: Sequence[Chunk],
    question: str,
    proposed: Sequence[ProposedAnswer],
    top_n: int = 30,
    params: BM25LParams | None = None,
    fusion: FusionParams | None = None,
) -> list[RankedChunk]:
    """Fuse the BM25L rankings of the question and each proposed answer.

    A chunk scoring zero for a query is left out of that query's ranking.
    """
    if not chunks:
        return []
    queries = [question] + [p.query_text() for p in proposed]
    index = _chunk_index(chunks)
    rankings = [
        [index.unit_ids[i] for i, score in _ordered(index, q, params) if score > 0] for q in queries
    ]
    by_id = {c.chunk_id: c for c in chunks}
    fused = rrf_fuse(rankings, fusion)[:top_n]
    return [RankedChunk(f.item_id, by_id[f.item_id].doc_id, f.score, f.ranks) for f in fused]
