"""Document model, corpus ingestion and dictionary-based entity annotation."""

from __future__ import annotations

import csv
import datetime as dt
import json
import re
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

ENTITY_TYPES = ("gene", "disease")

_FIRST_TOKEN_RE = re.compile(r"[^\W_]+")


class CorpusError(ValueError):
    """Raised for malformed corpus or dictionary input."""


@dataclass(frozen=True)
class Section:
    section_id: str
    heading: str
    text: str


@dataclass(frozen=True)
class EntityMention:
    surface: str
    start: int
    end: int
    entity_id: str
    entity_type: str
    # "title", "abstract" or "section:<section_id>"
    field: str = "abstract"

    @property
    def char_span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    abstract: str
    pub_date: dt.date
    sections: tuple[Section, ...] = ()
    entities: tuple[EntityMention, ...] = ()

    def __post_init__(self):
        ids = [s.section_id for s in self.sections]
        if len(set(ids)) != len(ids):
            raise CorpusError(f"duplicate section_id in document {self.doc_id!r}")

    @property
    def has_full_text(self) -> bool:
        return bool(self.sections)

    def fields(self) -> Iterator[tuple[str, str]]:
        """Yield ``(field_name, text)`` for every annotatable field."""
        yield "title", self.title
        yield "abstract", self.abstract
        for s in self.sections:
            yield f"section:{s.section_id}", s.text

    def field_text(self, name: str) -> str:
        for fname, text in self.fields():
            if fname == name:
                return text
        raise KeyError(name)

    def full_text(self) -> str:
        return "\n\n".join(text for _, text in self.fields() if text)

    def to_dict(self) -> dict:
        d = {
            "doc_id": self.doc_id,
            "title": self.title,
            "abstract": self.abstract,
            "pub_date": self.pub_date.isoformat(),
            "sections": [
                {"section_id": s.section_id, "heading": s.heading, "text": s.text}
                for s in self.sections
            ],
        }
        if self.entities:
            d["entities"] = [
                {
                    "surface": m.surface,
                    "start": m.start,
                    "end": m.end,
                    "entity_id": m.entity_id,
                    "entity_type": m.entity_type,
                    "field": m.field,
                }
                for m in self.entities
            ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        return cls(
            doc_id=str(d["doc_id"]),
            title=d["title"],
            abstract=d["abstract"],
            pub_date=dt.date.fromisoformat(d["pub_date"]),
            sections=tuple(
                Section(str(s["section_id"]), s.get("heading", ""), s["text"])
                for s in d.get("sections") or ()
            ),
            entities=tuple(EntityMention(**m) for m in d.get("entities") or ()),
        )


def ingest_corpus(path: str | Path) -> list[Document]:
    """Read a JSON-lines corpus file, one document per line, order preserved."""
    docs: list[Document] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = Document.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed record ({exc})") from exc
            if doc.doc_id in seen:
                raise CorpusError(
                    f"{path}: duplicate doc_id {doc.doc_id!r} on lines {seen[doc.doc_id]} and {lineno}"
                )
            seen[doc.doc_id] = lineno
            docs.append(doc)
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")


def _first_token(surface: str) -> str | None:
    m = _FIRST_TOKEN_RE.match(surface)
    return m.group().lower() if m else None


class EntityDictionary:
    """Case-insensitive surface to ``(entity_id, entity_type)`` lookup.

    A surface may belong to one entity per type, so a gene/disease homonym
    yields two candidates.
    """

    def __init__(self, entries: Iterable[tuple[str, str, str]] = ()):
        self._entries: dict[str, dict[str, str]] = {}
        self._by_first: dict[str, set[str]] = defaultdict(set)
        for surface, entity_id, entity_type in entries:
            self.add(surface, entity_id, entity_type)

    def add(self, surface: str, entity_id: str, entity_type: str) -> None:
        key = surface.strip().lower()
        if not key or not entity_id:
            raise CorpusError(f"empty surface or entity_id: {surface!r} -> {entity_id!r}")
        if entity_type not in ENTITY_TYPES:
            raise CorpusError(f"unknown entity_type {entity_type!r} for {surface!r}")
        first = _first_token(key)
        if first is None or not key[0].isalnum():
            raise CorpusError(f"surface must start with an alphanumeric character: {surface!r}")
        by_type = self._entries.setdefault(key, {})
        if by_type.get(entity_type, entity_id) != entity_id:
            raise CorpusError(
                f"surface {surface!r} maps to two {entity_type} ids: "
                f"{by_type[entity_type]} and {entity_id}"
            )
        by_type[entity_type] = entity_id
        self._by_first[first].add(key)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, surface: str) -> bool:
        return surface.strip().lower() in self._entries

    def lookup(self, surface: str) -> list[tuple[str, str]]:
        """All ``(entity_id, entity_type)`` candidates for a surface, sorted by type."""
        by_type = self._entries.get(surface.strip().lower())
        if not by_type:
            return []
        return sorted(((eid, etype) for etype, eid in by_type.items()), key=lambda c: c[1])

    def surfaces_starting_with(self, token: str) -> set[str]:
        return self._by_first.get(token, set())

    def entries(self) -> list[tuple[str, str, str]]:
        return [
            (surface, eid, etype)
            for surface, by_type in sorted(self._entries.items())
            for etype, eid in sorted(by_type.items())
        ]

    def surfaces_for(self, entity_id: str) -> list[str]:
        return sorted(s for s, by_type in self._entries.items() if entity_id in by_type.values())


def load_dictionary(path: str | Path) -> EntityDictionary:
    """Read a tab-separated dictionary with a ``surface, entity_id, entity_type`` header."""
    d = EntityDictionary()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = {"surface", "entity_id", "entity_type"} - set(reader.fieldnames or ())
        if missing:
            raise CorpusError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                d.add(row["surface"], row["entity_id"], row["entity_type"])
            except CorpusError as exc:
                raise CorpusError(f"{path}: line {reader.line_num}: {exc}") from exc
    return d


def write_dictionary(dictionary: EntityDictionary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["surface", "entity_id", "entity_type"])
        writer.writerows(dictionary.entries())


def normalize_surface(surface: str, dictionary: EntityDictionary) -> list[tuple[str, str]]:
    """Exact case-insensitive lookup; an empty list when the surface is unknown."""
    if not surface.strip():
        return []
    return dictionary.lookup(surface)


def find_mentions(text: str, dictionary: EntityDictionary, field: str = "text") -> list[EntityMention]:
    """Maximal whole-token dictionary matches in ``text``.

    A match that lies strictly inside a longer match is discarded; partially
    overlapping matches are both kept.
    """
    lowered = text.lower()
    if len(lowered) != len(text):
        # keep offsets aligned when lowering expands a character
        lowered = "".join(ch.lower()[:1] for ch in text)
    spans: list[tuple[int, int, str]] = []
    for m in _FIRST_TOKEN_RE.finditer(lowered):
        start = m.start()
        for surface in dictionary.surfaces_starting_with(m.group()):
            end = start + len(surface)
            if lowered[start:end] != surface:
                continue
            if end < len(text) and text[end].isalnum() and surface[-1].isalnum():
                continue
            spans.append((start, end, surface))
    if not spans:
        return []
    spans.sort(key=lambda s: (s[0], -s[1]))
    kept = []
    max_end = -1
    for start, end, surface in spans:
        # spans are unique and sorted by (start, -end): anything earlier reaching
        # at least as far encloses this one
        if max_end < end:
            kept.append((start, end, surface))
        max_end = max(max_end, end)
    mentions = []
    for start, end, surface in kept:
        for entity_id, entity_type in dictionary.lookup(surface):
            mentions.append(EntityMention(text[start:end], start, end, entity_id, entity_type, field))
    return mentions


def annotate_entities(doc: Document, dictionary: EntityDictionary) -> Document:
    """Return ``doc`` with dictionary mentions from every field.

    Existing mentions are kept; re-annotating is a no-op.
    """
    found = set(doc.entities)
    for fname, text in doc.fields():
        found.update(find_mentions(text, dictionary, fname))
    ordered = sorted(found, key=_mention_order(doc))
    return replace(doc, entities=tuple(ordered))


def _mention_order(doc: Document):
    field_rank = {name: i for i, (name, _) in enumerate(doc.fields())}

    def key(m: EntityMention):
        return (field_rank.get(m.field, len(field_rank)), m.start, m.end, m.entity_type, m.entity_id)

    return key
