"""Sentence-preserving, overlapping chunking of documents."""

from __future__ import annotations

from dataclasses import dataclass

from ..corpus import Document
from .sentences import split_sentences


@dataclass(frozen=True)
class ChunkingConfig:
    max_chunk_words: int = 10000
    overlap_words: int = 250

    def __post_init__(self):
        if self.max_chunk_words < 1 or self.overlap_words < 0:
            raise ValueError("chunk sizes must be positive")
        if self.overlap_words >= self.max_chunk_words:
            raise ValueError("overlap_words must be smaller than max_chunk_words")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    section_ids: tuple[str, ...]
    text: str
    word_count: int


@dataclass(frozen=True)
class _Sentence:
    section_index: int
    start: int
    end: int
    words: int


def word_count(text: str) -> int:
    return len(text.split())


def _sentences(doc: Document) -> list[_Sentence]:
    out = []
    for i, section in enumerate(doc.sections):
        for start, end in split_sentences(section.text):
            out.append(_Sentence(i, start, end, word_count(section.text[start:end])))
    return out


def _render(doc: Document, chunk_id: str, sents: list[_Sentence]) -> Chunk:
    section_ids = []
    pieces = []
    # sentences of one section inside a chunk are contiguous, so slice once per section
    by_section: dict[int, list[_Sentence]] = {}
    for s in sents:
        by_section.setdefault(s.section_index, []).append(s)
    for idx, group in by_section.items():
        section = doc.sections[idx]
        section_ids.append(section.section_id)
        pieces.append(section.text[group[0].start : group[-1].end])
    return Chunk(
        chunk_id=chunk_id,
        doc_id=doc.doc_id,
        section_ids=tuple(section_ids),
        text="\n\n".join(pieces),
        word_count=sum(s.words for s in sents),
    )


def _overlap_tail(sents: list[_Sentence], cfg: ChunkingConfig) -> list[_Sentence]:
    """Shortest sentence suffix reaching ``overlap_words``, capped at ``max_chunk_words``."""
    if cfg.overlap_words == 0:
        return []
    total = 0
    i = len(sents)
    while i > 0 and total < cfg.overlap_words:
        if total + sents[i - 1].words > cfg.max_chunk_words:
            break
        total += sents[i - 1].words
        i -= 1
    return sents[i:]


def chunk_document(doc: Document, cfg: ChunkingConfig | None = None) -> list[Chunk]:
    """Pack whole sentences into chunks of at most ``cfg.max_chunk_words``.

    Consecutive sections share the sentence stream, so short sections merge
    into one chunk. On closing a chunk its shortest sentence suffix holding at
    least ``overlap_words`` words opens the next one. A sentence longer than
    the budget is never split. Documents without sections give a single
    title-plus-abstract chunk.
    """
    cfg = cfg or ChunkingConfig()
    if not doc.sections:
        text = "\n\n".join(t for t in (doc.title, doc.abstract) if t)
        return [Chunk(f"{doc.doc_id}#0", doc.doc_id, (), text, word_count(text))]

    chunks: list[Chunk] = []
    current: list[_Sentence] = []
    words = 0
    fresh = 0  # sentences in `current` not carried over from the previous chunk
    for sent in _sentences(doc):
        if fresh and words + sent.words > cfg.max_chunk_words:
            chunks.append(_render(doc, f"{doc.doc_id}#{len(chunks)}", current))
            current = _overlap_tail(current, cfg)
            words = sum(s.words for s in current)
            fresh = 0
        current.append(sent)
        words += sent.words
        fresh += 1
    if fresh:
        chunks.append(_render(doc, f"{doc.doc_id}#{len(chunks)}", current))
    return chunks
