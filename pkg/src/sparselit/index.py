"""Inverted index with BM25L scoring and must/should term-set search."""

from __future__ import annotations

import datetime as dt
import enum
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .corpus import Document, EntityDictionary, annotate_entities
from .textproc.tokenize import default_stopwords, tokenize

SNAPSHOT_FORMAT = "sparselit-index"
SNAPSHOT_VERSION = 1

# Normalized entity identifiers look like ``ENSEMBL:ENSG00000088727`` or ``MESH:D001943``.
ENTITY_ID_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_.-]*:[A-Za-z0-9_.:-]+$")


class IndexBuildError(ValueError):
    """Raised on invalid index construction or snapshot input."""


class Granularity(str, enum.Enum):
    DOCUMENT = "document"
    CHUNK = "chunk"


class Boost(str, enum.Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"


DEFAULT_BOOST_WEIGHTS: dict[Boost, float] = {Boost.LOW: 1.0, Boost.MEDIUM: 2.0, Boost.HIGH: 4.0}


@dataclass(frozen=True)
class BM25LParams:
    k1: float = 1.2
    b: float = 0.75
    delta: float = 0.5

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass(frozen=True)
class RecencyParams:
    weight: float = 0.2
    half_life_years: float = 5.0
    # None means "the latest pub_date in the index"
    reference_date: dt.date | None = None

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("recency weight must be non-negative")
        if not self.half_life_years > 0:
            raise ValueError("half_life_years must be positive")


@dataclass(frozen=True)
class ShouldGroup:
    terms: tuple[str, ...]
    boost: Boost


@dataclass(frozen=True)
class SearchTermSet:
    """Conjunctive must groups and boosted optional groups; synonyms within a group are OR-ed."""

    must_groups: tuple[tuple[str, ...], ...] = ()
    should_groups: tuple[ShouldGroup, ...] = ()

    def __post_init__(self):
        for group in self.must_groups:
            if not group:
                raise ValueError("empty must group")
        for group in self.should_groups:
            if not group.terms:
                raise ValueError("empty should group")

    @classmethod
    def build(cls, must=(), should=()) -> "SearchTermSet":
        """Convenience constructor from plain lists: ``should`` holds ``(terms, boost)`` pairs."""
        return cls(
            tuple(tuple(g) for g in must),
            tuple(ShouldGroup(tuple(t), Boost(b)) for t, b in should),
        )

    def with_must(self, group: Sequence[str]) -> "SearchTermSet":
        return SearchTermSet(self.must_groups + (tuple(group),), self.should_groups)

    def all_terms(self) -> list[str]:
        out = [t for g in self.must_groups for t in g]
        out += [t for g in self.should_groups for t in g.terms]
        return out


@dataclass(frozen=True)
class SearchHit:
    unit_id: str
    score: float
    matched_groups: tuple[str, ...] = ()


def is_entity_id(term: str) -> bool:
    return bool(ENTITY_ID_RE.match(term.strip()))


def calendar_age_years(published: dt.date, reference: dt.date) -> float:
    """Whole anniversaries between the dates plus the elapsed fraction of the next year."""
    if published >= reference:
        return 0.0
    years = reference.year - published.year
    if (reference.month, reference.day) < (published.month, published.day):
        years -= 1
    anniversary = _add_years(published, years)
    following = _add_years(published, years + 1)
    return years + (reference - anniversary).days / (following - anniversary).days


def _add_years(d: dt.date, n: int) -> dt.date:
    try:
        return d.replace(year=d.year + n)
    except ValueError:  # 29 February
        return d.replace(year=d.year + n, day=28)


def recency_multiplier(published: dt.date | None, params: RecencyParams, reference: dt.date | None) -> float:
    if params.weight == 0 or published is None or reference is None:
        return 1.0
    age = calendar_age_years(published, reference)
    return 1.0 + params.weight * 2.0 ** (-age / params.half_life_years)


Unit = Union[str, Document]


@dataclass
class _Postings:
    units: np.ndarray  # int64 unit indices, ascending
    tfs: np.ndarray  # float64 term frequencies


class InvertedIndex:
    """Immutable inverted index over documents or chunks.

    Text terms are Porter2 stems; entity annotations are indexed separately
    under their normalized identifiers.
    """

    def __init__(
        self,
        unit_ids: list[str],
        lengths: Sequence[int],
        dates: list[dt.date | None],
        term_counts: list[Mapping[str, int]],
        entity_counts: list[Mapping[str, int]],
        granularity: Granularity = Granularity.DOCUMENT,
        stopwords: frozenset[str] | None = None,
        documents: Mapping[str, Document] | None = None,
        dictionary: EntityDictionary | None = None,
    ):
        if len(set(unit_ids)) != len(unit_ids):
            dupes = sorted(u for u, c in Counter(unit_ids).items() if c > 1)
            raise IndexBuildError(f"duplicate unit_id(s): {dupes[:5]}")
        self.unit_ids = list(unit_ids)
        self.granularity = Granularity(granularity)
        self.stopwords = default_stopwords() if stopwords is None else frozenset(stopwords)
        self.lengths = np.asarray(lengths, dtype=np.float64)
        self.dates = list(dates)
        self.documents = dict(documents or {})
        self.dictionary = dictionary
        self._term_counts = [dict(c) for c in term_counts]
        self._entity_counts = [dict(c) for c in entity_counts]
        self._position = {u: i for i, u in enumerate(self.unit_ids)}
        # rank of each unit_id in lexicographic order, for tie-breaking
        order = sorted(range(len(self.unit_ids)), key=self.unit_ids.__getitem__)
        self._id_rank = np.empty(len(order), dtype=np.int64)
        self._id_rank[order] = np.arange(len(order))
        self._terms = self._invert(self._term_counts)
        self._entities = self._invert(self._entity_counts)

    @staticmethod
    def _invert(counts: list[Mapping[str, int]]) -> dict[str, _Postings]:
        lists: dict[str, tuple[list[int], list[int]]] = {}
        for i, c in enumerate(counts):
            for term, tf in c.items():
                u, t = lists.setdefault(term, ([], []))
                u.append(i)
                t.append(tf)
        return {
            term: _Postings(np.asarray(u, dtype=np.int64), np.asarray(t, dtype=np.float64))
            for term, (u, t) in lists.items()
        }

    @property
    def N(self) -> int:
        return len(self.unit_ids)

    @property
    def avgdl(self) -> float:
        return float(self.lengths.mean()) if self.N else 0.0

    @property
    def stats(self) -> tuple[int, float]:
        return (self.N, self.avgdl)

    @property
    def latest_date(self) -> dt.date | None:
        known = [d for d in self.dates if d is not None]
        return max(known) if known else None

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self._position

    def position(self, unit_id: str) -> int:
        return self._position[unit_id]

    def unit_length(self, unit_id: str) -> int:
        return int(self.lengths[self._position[unit_id]])

    def term_frequency(self, term: str, unit_id: str) -> int:
        return self._term_counts[self._position[unit_id]].get(term, 0)

    def entity_frequency(self, entity_id: str, unit_id: str) -> int:
        return self._entity_counts[self._position[unit_id]].get(entity_id, 0)

    def document_frequency(self, term: str) -> int:
        p = self._terms.get(term)
        return 0 if p is None else len(p.units)

    def entity_document_frequency(self, entity_id: str) -> int:
        p = self._entities.get(entity_id)
        return 0 if p is None else len(p.units)

    def postings(self, term: str) -> list[tuple[str, int]]:
        p = self._terms.get(term)
        if p is None:
            return []
        return [(self.unit_ids[i], int(tf)) for i, tf in zip(p.units, p.tfs)]

    def vocabulary(self) -> list[str]:
        return sorted(self._terms)

    def query_stems(self, text: str) -> list[str]:
        return [t.stem for t in tokenize(text, self.stopwords)]

    # -- scoring -----------------------------------------------------------

    def _idf(self, df: int) -> float:
        return math.log((self.N + 1) / (df + 0.5))

    def _contribution(self, postings: _Postings | None, params: BM25LParams) -> tuple[np.ndarray, np.ndarray]:
        """Dense per-unit BM25L contribution and match mask for one term."""
        scores = np.zeros(self.N)
        mask = np.zeros(self.N, dtype=bool)
        if postings is None or self.N == 0:
            return scores, mask
        idf = self._idf(len(postings.units))
        dl = self.lengths[postings.units]
        avgdl = self.avgdl or 1.0
        c = postings.tfs / (1.0 - params.b + params.b * dl / avgdl)
        k1, delta = params.k1, params.delta
        scores[postings.units] = idf * (k1 + 1.0) * (c + delta) / (k1 + c + delta)
        mask[postings.units] = True
        return scores, mask

    def term_vector(self, stem: str, params: BM25LParams) -> tuple[np.ndarray, np.ndarray]:
        return self._contribution(self._terms.get(stem), params)

    def entity_vector(self, entity_id: str, params: BM25LParams) -> tuple[np.ndarray, np.ndarray]:
        return self._contribution(self._entities.get(entity_id), params)

    def score_all(self, query_stems: Sequence[str], params: BM25LParams | None = None) -> np.ndarray:
        """BM25L of every unit against a bag of stems."""
        params = params or BM25LParams()
        total = np.zeros(self.N)
        for s in query_stems:
            total += self.term_vector(s, params)[0]
        return total


def _unit_content(unit: Unit, stopwords) -> tuple[str, Counter, Counter, dt.date | None, int]:
    if isinstance(unit, Document):
        text = unit.full_text()
        entities = Counter(m.entity_id for m in unit.entities)
        date = unit.pub_date
    else:
        text, entities, date = unit, Counter(), None
    tokens = tokenize(text, stopwords)
    return text, Counter(t.stem for t in tokens), entities, date, len(tokens)


def build_index(
    units: Iterable[tuple[str, Unit]],
    granularity: Granularity | str = Granularity.DOCUMENT,
    stopwords: Iterable[str] | None = None,
    dictionary: EntityDictionary | None = None,
    keep_documents: bool = True,
) -> InvertedIndex:
    """Tokenize and invert ``(unit_id, text-or-Document)`` pairs.

    With a ``dictionary``, documents are annotated before indexing so their
    entity identifiers become searchable.
    """
    stops = default_stopwords() if stopwords is None else frozenset(stopwords)
    ids, lengths, dates, terms, entities = [], [], [], [], []
    documents = {}
    seen = set()
    for unit_id, unit in units:
        if unit_id in seen:
            raise IndexBuildError(f"duplicate unit_id {unit_id!r}")
        seen.add(unit_id)
        if dictionary is not None and isinstance(unit, Document):
            unit = annotate_entities(unit, dictionary)
        _, tf, ef, date, length = _unit_content(unit, stops)
        ids.append(unit_id)
        lengths.append(length)
        dates.append(date)
        terms.append(tf)
        entities.append(ef)
        if keep_documents and isinstance(unit, Document):
            documents[unit_id] = unit
    return InvertedIndex(
        ids, lengths, dates, terms, entities, Granularity(granularity), stops, documents, dictionary
    )


def index_documents(docs: Iterable[Document], **kwargs) -> InvertedIndex:
    return build_index(((d.doc_id, d) for d in docs), Granularity.DOCUMENT, **kwargs)


def bm25l_score(index: InvertedIndex, query_terms: Sequence[str], unit_id: str, params: BM25LParams | None = None) -> float:
    """BM25L of one unit for a list of stems (duplicates count once per occurrence)."""
    params = params or BM25LParams()
    if unit_id not in index:
        raise KeyError(unit_id)
    dl = index.unit_length(unit_id)
    avgdl = index.avgdl or 1.0
    total = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, unit_id)
        if tf == 0:
            continue
        idf = math.log((index.N + 1) / (index.document_frequency(term) + 0.5))
        c = tf / (1.0 - params.b + params.b * dl / avgdl)
        total += idf * (params.k1 + 1.0) * (c + params.delta) / (params.k1 + c + params.delta)
    return total


# -- search -----------------------------------------------------------------


def _synonym_vector(index: InvertedIndex, term: str, params: BM25LParams, cache: dict) -> tuple[np.ndarray, np.ndarray]:
    """Score and match mask of one synonym.

    Entity identifiers hit the annotation postings. A multi-word keyword
    matches a unit only when all of its stems occur there, scoring the sum.
    """
    if term in cache:
        return cache[term]
    if is_entity_id(term):
        result = index.entity_vector(term.strip(), params)
    else:
        stems = index.query_stems(term)
        if not stems:
            result = (np.zeros(index.N), np.zeros(index.N, dtype=bool))
        else:
            score = np.zeros(index.N)
            mask = np.ones(index.N, dtype=bool)
            for s in stems:
                sv, mv = index.term_vector(s, params)
                score += sv
                mask &= mv
            result = (np.where(mask, score, 0.0), mask)
    cache[term] = result
    return result


def _group_vector(index, terms, params, cache):
    best = np.zeros(index.N)
    matched = np.zeros(index.N, dtype=bool)
    for term in terms:
        s, m = _synonym_vector(index, term, params, cache)
        best = np.maximum(best, s)
        matched |= m
    return best, matched


def _evaluate(
    index: InvertedIndex,
    terms: SearchTermSet,
    recency: RecencyParams,
    date_cutoff: dt.date | None,
    params: BM25LParams,
    boosts: Mapping[Boost, float],
):
    n = index.N
    cache: dict = {}
    candidates = np.ones(n, dtype=bool)
    score = np.zeros(n)
    group_masks = []
    for i, group in enumerate(terms.must_groups):
        s, m = _group_vector(index, group, params, cache)
        candidates &= m
        score += s
        group_masks.append((f"must:{i}", m))
    any_should = np.zeros(n, dtype=bool)
    for i, group in enumerate(terms.should_groups):
        s, m = _group_vector(index, group.terms, params, cache)
        score += boosts[group.boost] * s
        any_should |= m
        group_masks.append((f"should:{i}", m))
    if not terms.must_groups and terms.should_groups:
        candidates &= any_should
    if date_cutoff is not None:
        dated = np.array([d is not None and d <= date_cutoff for d in index.dates], dtype=bool)
        candidates &= dated
    if recency.weight:
        reference = recency.reference_date or index.latest_date
        mult = np.array([recency_multiplier(d, recency, reference) for d in index.dates])
        score = score * mult
    return candidates, score, group_masks


def execute_search(
    index: InvertedIndex,
    terms: SearchTermSet,
    recency: RecencyParams | None = None,
    date_cutoff: dt.date | None = None,
    top_k: int = 200,
    params: BM25LParams | None = None,
    boosts: Mapping[Boost, float] | None = None,
) -> list[SearchHit]:
    """Rank the units satisfying every must group.

    Each group scores its best synonym; should groups are scaled by their
    boost weight and the total is multiplied by the recency factor. With no
    must groups at least one should group has to match. Ties go to the
    smaller unit_id.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    recency = recency or RecencyParams()
    params = params or BM25LParams()
    boosts = {**DEFAULT_BOOST_WEIGHTS, **(boosts or {})}
    if index.N == 0:
        return []
    candidates, score, group_masks = _evaluate(index, terms, recency, date_cutoff, params, boosts)
    idx = np.flatnonzero(candidates)
    if idx.size == 0:
        return []
    order = np.lexsort((index._id_rank[idx], -score[idx]))[:top_k]
    hits = []
    for j in idx[order]:
        matched = tuple(name for name, m in group_masks if m[j])
        hits.append(SearchHit(index.unit_ids[j], float(score[j]), matched))
    return hits


def count_matches(
    index: InvertedIndex, terms: SearchTermSet, date_cutoff: dt.date | None = None
) -> int:
    """Size of the candidate set before ``top_k`` truncation (total search hits)."""
    if index.N == 0:
        return 0
    candidates, _, _ = _evaluate(
        index, terms, RecencyParams(weight=0.0), date_cutoff, BM25LParams(), DEFAULT_BOOST_WEIGHTS
    )
    return int(candidates.sum())


def build_mlt_query(text: str, index: InvertedIndex, n_terms: int = 25) -> SearchTermSet:
    """'More like this' baseline: the top ``n_terms`` stems of ``text`` by tf-idf.

    Each selected stem is emitted through the first surface word that produced
    it, so re-tokenizing the term gives back the same stem.
    """
    if index.N == 0:
        raise ValueError("cannot build a more-like-this query over an empty index")
    tf: Counter = Counter()
    surface: dict[str, str] = {}
    for tok in tokenize(text, index.stopwords):
        tf[tok.stem] += 1
        surface.setdefault(tok.stem, text[tok.start : tok.end].lower())
    scored = []
    for s, count in tf.items():
        df = index.document_frequency(s)
        if df == 0:
            continue
        scored.append((count * math.log(index.N / df), s))
    scored.sort(key=lambda x: (-x[0], x[1]))
    groups = tuple(ShouldGroup((surface[s],), Boost.MEDIUM) for _, s in scored[:n_terms])
    return SearchTermSet((), groups)


# -- persistence --------------------------------------------------------------


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Write a self-describing JSON-lines snapshot (header, dictionary, units)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "header",
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "granularity": index.granularity.value,
            "n_units": index.N,
            "stopwords": sorted(index.stopwords),
        }
        fh.write(json.dumps(header) + "\n")
        if index.dictionary is not None:
            for surface, eid, etype in index.dictionary.entries():
                fh.write(json.dumps({"kind": "dictionary", "surface": surface, "entity_id": eid, "entity_type": etype}) + "\n")
        for i, unit_id in enumerate(index.unit_ids):
            rec = {
                "kind": "unit",
                "unit_id": unit_id,
                "length": int(index.lengths[i]),
                "date": index.dates[i].isoformat() if index.dates[i] else None,
                "terms": dict(sorted(index._term_counts[i].items())),
                "entities": dict(sorted(index._entity_counts[i].items())),
            }
            if unit_id in index.documents:
                rec["document"] = index.documents[unit_id].to_dict()
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header" or lines[0].get("format") != SNAPSHOT_FORMAT:
        raise IndexBuildError(f"{path}: not a {SNAPSHOT_FORMAT} snapshot")
    header = lines[0]
    if header.get("version") != SNAPSHOT_VERSION:
        raise IndexBuildError(f"{path}: unsupported snapshot version {header.get('version')}")
    dictionary = None
    ids, lengths, dates, terms, entities, documents = [], [], [], [], [], {}
    for rec in lines[1:]:
        if rec["kind"] == "dictionary":
            if dictionary is None:
                dictionary = EntityDictionary()
            dictionary.add(rec["surface"], rec["entity_id"], rec["entity_type"])
        elif rec["kind"] == "unit":
            ids.append(rec["unit_id"])
            lengths.append(rec["length"])
            dates.append(dt.date.fromisoformat(rec["date"]) if rec["date"] else None)
            terms.append(rec["terms"])
            entities.append(rec["entities"])
            if "document" in rec:
                documents[rec["unit_id"]] = Document.from_dict(rec["document"])
    if len(ids) != header["n_units"]:
        raise IndexBuildError(f"{path}: expected {header['n_units']} units, found {len(ids)}")
    return InvertedIndex(
        ids, lengths, dates, terms, entities, Granularity(header["granularity"]),
        frozenset(header["stopwords"]), documents, dictionary,
    )


@dataclass(frozen=True)
class SearchTemplate:
    """Search-time settings read from a configuration document."""

    boosts: Mapping[Boost, float] = field(default_factory=lambda: dict(DEFAULT_BOOST_WEIGHTS))
    recency: RecencyParams = field(default_factory=RecencyParams)
    bm25l: BM25LParams = field(default_factory=BM25LParams)
    top_k: int = 200
