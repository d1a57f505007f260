"""End-to-end question answering and the chain-of-verification loop."""

from __future__ import annotations

import datetime as dt
import enum
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .agents import (
    AgentOutputError,
    Answer,
    ChunkSummary,
    ProposedAnswer,
    Verdict,
    _all_tags,
    _last_block,
    _retrying,
    answer_agent,
    dedup_agent,
    ner_agent,
    proposed_answers_agent,
    search_terms_agent,
    serialize_search_terms,
    parse_search_terms,
    summarize_all,
)
from .corpus import Document, EntityDictionary
from .index import (
    DEFAULT_BOOST_WEIGHTS,
    BM25LParams,
    Boost,
    Granularity,
    InvertedIndex,
    RecencyParams,
    SearchTermSet,
    count_matches,
    execute_search,
)
from .llm import Gateway, LLMError, Prompt
from .rerank import FusionParams, rerank
from .textproc.chunking import Chunk, ChunkingConfig, chunk_document

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AskConfig:
    top_docs: int = 200
    top_chunks: int = 30
    dedup_enabled: bool = False
    dedup_set_size: int = 3
    date_cutoff: dt.date | None = None
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    bm25l: BM25LParams = field(default_factory=BM25LParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    recency: RecencyParams = field(default_factory=RecencyParams)
    boosts: Mapping[Boost, float] = field(default_factory=lambda: dict(DEFAULT_BOOST_WEIGHTS))

    def __post_init__(self):
        if self.top_docs < 1 or self.top_chunks < 1:
            raise ValueError("top_docs and top_chunks must be >= 1")
        if self.dedup_set_size < 2:
            raise ValueError("dedup_set_size must be >= 2")


@dataclass(frozen=True)
class StageTrace:
    question: str = ""
    search_hits: tuple[tuple[str, float], ...] = ()
    total_hits: int = 0
    reranked: tuple[tuple[str, str, float], ...] = ()  # (chunk_id, doc_id, fused score)
    retained_doc_ids: tuple[str, ...] = ()
    attributed_doc_ids: tuple[str, ...] = ()
    term_set: SearchTermSet = field(default_factory=SearchTermSet)
    proposed: tuple[ProposedAnswer, ...] = ()

    @property
    def search_doc_ids(self) -> list[str]:
        return [d for d, _ in self.search_hits]

    @property
    def reranked_doc_ids(self) -> list[str]:
        return list(dict.fromkeys(d for _, d, _ in self.reranked))

    def search_rank(self, doc_id: str) -> int | None:
        for rank, (d, _) in enumerate(self.search_hits, start=1):
            if d == doc_id:
                return rank
        return None


@dataclass(frozen=True)
class AnswerBundle:
    answer: Answer
    retained: tuple[ChunkSummary, ...]
    trace: StageTrace

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


@dataclass(frozen=True)
class CoveResult:
    draft: AnswerBundle
    statements: tuple[str, ...]
    questions: tuple[str, ...]
    verifications: tuple[AnswerBundle, ...]
    final: str
    reference_union: frozenset[str]
    draft_references: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {
            "draft": self.draft.to_dict(),
            "statements": list(self.statements),
            "questions": list(self.questions),
            "verifications": [v.to_dict() for v in self.verifications],
            "final": self.final,
            "reference_union": sorted(self.reference_union),
            "draft_references": sorted(self.draft_references),
        }


def _jsonable(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(_jsonable(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (frozenset, set)):
        return sorted(_jsonable(v) for v in obj)
    if isinstance(obj, dt.date):
        return obj.isoformat()
    return obj


def chunks_for(doc: Document, cfg: ChunkingConfig) -> list[Chunk]:
    """Full-text documents are chunked; abstract-only records become one chunk."""
    return chunk_document(doc, cfg)


def ask(
    question: str,
    index: InvertedIndex,
    corpus: Mapping[str, Document] | None,
    dictionary: EntityDictionary | None,
    gateway: Gateway,
    cfg: AskConfig | None = None,
    options: Sequence[str] | None = None,
) -> AnswerBundle:
    """Retrieve, re-rank, summarize and answer one question."""
    cfg = cfg or AskConfig()
    if index.granularity is not Granularity.DOCUMENT:
        raise ValueError("ask needs a document-granularity index")
    corpus = corpus if corpus is not None else index.documents
    dictionary = dictionary if dictionary is not None else index.dictionary

    mentions = ner_agent(question, dictionary) if dictionary is not None else []
    terms = search_terms_agent(question, mentions, gateway)
    hits = execute_search(
        index, terms, cfg.recency, cfg.date_cutoff, cfg.top_docs, cfg.bm25l, cfg.boosts
    )
    total = count_matches(index, terms, cfg.date_cutoff) if hits else 0
    trace = StageTrace(
        question=question,
        search_hits=tuple((h.unit_id, h.score) for h in hits),
        total_hits=total,
        term_set=terms,
    )
    if not hits:
        return AnswerBundle(Answer.decline("no documents matched the search terms"), (), trace)

    chunks: list[Chunk] = []
    for hit in hits:
        doc = corpus.get(hit.unit_id)
        if doc is None:
            logger.warning("search hit %s has no stored document; skipped", hit.unit_id)
            continue
        chunks.extend(chunks_for(doc, cfg.chunking))

    proposed = proposed_answers_agent(question, gateway)
    ranked = rerank(chunks, question, proposed, cfg.top_chunks, cfg.bm25l, cfg.fusion)
    by_id = {c.chunk_id: c for c in chunks}
    summaries = summarize_all(question, [by_id[r.chunk_id] for r in ranked], gateway)
    retained = [s for s in summaries if s.verdict is Verdict.RETAINED]
    if cfg.dedup_enabled:
        retained = dedup_agent(question, retained, gateway, cfg.dedup_set_size)
    answer = answer_agent(question, retained, gateway, options)

    trace = StageTrace(
        question=question,
        search_hits=trace.search_hits,
        total_hits=total,
        reranked=tuple((r.chunk_id, r.doc_id, r.fused_score) for r in ranked),
        retained_doc_ids=tuple(dict.fromkeys(s.doc_id for s in retained)),
        attributed_doc_ids=answer.attribution,
        term_set=terms,
        proposed=tuple(proposed),
    )
    return AnswerBundle(answer, tuple(retained), trace)


def collect_references(bundles: Iterable[AnswerBundle], mode: str = "attributed") -> set[str]:
    """Union of attributed (or retained) document ids over ``bundles``."""
    if mode not in ("attributed", "retained"):
        raise ValueError(f"unknown reference mode {mode!r}")
    refs: set[str] = set()
    for b in bundles:
        if mode == "attributed":
            refs.update(b.answer.attribution)
        else:
            refs.update(b.trace.retained_doc_ids)
    return refs


# -- chain of verification -------------------------------------------------------

PLAN_SYSTEM = """TASK: plan-statements
List the key factual statements made in the draft answer, about {n} of them,
one per <statement> element inside a <statements> block."""

QUESTIONS_SYSTEM = """TASK: statements-to-questions
Turn each statement into a probing question that would verify it or look for
contradicting evidence. Emit one line per statement inside <questions>:
STATEMENT: ... | QUESTION: ..."""

FINAL_SYSTEM = """TASK: final-response
Write the final answer from the draft and the verification answers, keeping
claims that survived verification and citing doc_ids. Put it inside <final>."""

_PAIR_RE = re.compile(r"STATEMENT:\s*(.*?)\s*\|\s*QUESTION:\s*(.*)", re.IGNORECASE)


def _parse_statements(reply: str) -> list[str]:
    block = _last_block("statements", reply)
    if block is None:
        raise AgentOutputError("no <statements> block found")
    return [s for s in _all_tags("statement", block) if s]


def _parse_question_pairs(reply: str) -> list[tuple[str, str]]:
    block = _last_block("questions", reply)
    if block is None:
        raise AgentOutputError("no <questions> block found")
    pairs = []
    for line in block.splitlines():
        m = _PAIR_RE.search(line)
        if m and m.group(2).strip():
            pairs.append((m.group(1).strip(), m.group(2).strip()))
    return pairs


def _parse_final(reply: str) -> str:
    block = _last_block("final", reply)
    if block is None or not block.strip():
        raise AgentOutputError("no <final> block found")
    return block.strip()


def _bundle_block(label: str, bundle: AnswerBundle) -> str:
    cites = ", ".join(bundle.answer.attribution) or "none"
    status = "declined" if bundle.answer.declined else "answered"
    return f'<{label} status="{status}" cites="{cites}">{bundle.answer.text}</{label}>'


def cove(
    question: str,
    index: InvertedIndex,
    corpus: Mapping[str, Document] | None,
    dictionary: EntityDictionary | None,
    gateway: Gateway,
    cfg: AskConfig | None = None,
    n_statements: int = 10,
    reference_mode: str = "retained",
) -> CoveResult:
    """Draft, plan key statements, verify each as a new question, then synthesize.

    Verification questions reuse ``cfg`` (date cutoff included). A
    verification that fails is recorded as a declined answer.
    """
    cfg = cfg or AskConfig()
    draft = ask(question, index, corpus, dictionary, gateway, cfg)
    statements: list[str] = []
    pairs: list[tuple[str, str]] = []
    if not draft.answer.declined:
        plan = Prompt(
            user=f"QUESTION: {question}\nDRAFT:\n{draft.answer.text}",
            system=PLAN_SYSTEM.format(n=n_statements),
        )
        statements = _retrying(gateway, plan, _parse_statements)
    if statements:
        convert = Prompt(
            user="\n".join(f"<statement>{s}</statement>" for s in statements),
            system=QUESTIONS_SYSTEM,
        )
        pairs = _retrying(gateway, convert, _parse_question_pairs)

    verifications = []
    for _, q in pairs:
        try:
            verifications.append(ask(q, index, corpus, dictionary, gateway, cfg))
        except (AgentOutputError, LLMError) as exc:
            logger.warning("verification question failed (%s): %s", exc, q)
            verifications.append(
                AnswerBundle(Answer.decline(f"verification failed: {exc}"), (), StageTrace(question=q))
            )

    if verifications:
        user = "\n".join(
            [f"QUESTION: {question}", _bundle_block("draft", draft)]
            + [
                f"<verification question=\"{q}\">{_bundle_block('response', v)}</verification>"
                for (_, q), v in zip(pairs, verifications)
            ]
        )
        final = _retrying(gateway, Prompt(user=user, system=FINAL_SYSTEM), _parse_final)
    else:
        final = draft.answer.text

    draft_refs = collect_references([draft], reference_mode)
    union = draft_refs | collect_references(verifications, reference_mode)
    return CoveResult(
        draft=draft,
        statements=tuple(s for s, _ in pairs) if pairs else tuple(statements),
        questions=tuple(q for _, q in pairs),
        verifications=tuple(verifications),
        final=final,
        reference_union=frozenset(union),
        draft_references=frozenset(draft_refs),
    )


# -- trace export ----------------------------------------------------------------

STAGES = ("search", "rerank", "retained", "attributed")


def trace_records(
    trace: StageTrace,
    run: int | str | None = None,
    question_id: str | None = None,
    answer: Answer | None = None,
) -> list[dict]:
    """Line-delimited export of one trace: one record per stage."""
    base = {"run": run, "question_id": question_id, "question": trace.question}
    recs = [
        {**base, "stage": "terms", "markup": serialize_search_terms(trace.term_set)},
        {
            **base,
            "stage": "search",
            "ids": [d for d, _ in trace.search_hits],
            "scores": [s for _, s in trace.search_hits],
            "total_hits": trace.total_hits,
        },
        {
            **base,
            "stage": "rerank",
            "ids": [c for c, _, _ in trace.reranked],
            "doc_ids": [d for _, d, _ in trace.reranked],
            "scores": [s for _, _, s in trace.reranked],
        },
        {**base, "stage": "retained", "ids": list(trace.retained_doc_ids), "scores": None},
        {**base, "stage": "attributed", "ids": list(trace.attributed_doc_ids), "scores": None},
    ]
    if answer is not None:
        recs.append(
            {
                **base,
                "stage": "answer",
                "text": answer.text,
                "declined": answer.declined,
                "choice": answer.choice,
                "ids": list(answer.attribution),
            }
        )
    return recs


@dataclass(frozen=True)
class TraceEntry:
    run: int | str | None
    question_id: str | None
    trace: StageTrace
    answer: Answer | None = None


def traces_from_records(records: Iterable[dict]) -> list[TraceEntry]:
    """Rebuild traces from exported records grouped by ``(run, question_id, question)``.

    Entries come back in first-appearance order.
    """
    grouped: dict[tuple, dict] = {}
    for rec in records:
        if "stage" not in rec:
            raise ValueError(f"trace record without a stage: {rec!r}")
        key = (rec.get("run"), rec.get("question_id"), rec.get("question", ""))
        grouped.setdefault(key, {})[rec["stage"]] = rec
    out = []
    for (run, qid, question), stages in grouped.items():
        search = stages.get("search", {})
        search_ids = search.get("ids", [])
        rr = stages.get("rerank", {})
        terms = stages.get("terms")
        trace = StageTrace(
            question=question,
            search_hits=tuple(zip(search_ids, search.get("scores") or [0.0] * len(search_ids))),
            total_hits=search.get("total_hits", 0),
            reranked=tuple(zip(rr.get("ids", []), rr.get("doc_ids", []), rr.get("scores", []))),
            retained_doc_ids=tuple(stages.get("retained", {}).get("ids", [])),
            attributed_doc_ids=tuple(stages.get("attributed", {}).get("ids", [])),
            term_set=parse_search_terms(terms["markup"]) if terms else SearchTermSet(),
        )
        answer = None
        if "answer" in stages:
            a = stages["answer"]
            answer = Answer(a["text"], tuple(a.get("ids", [])), bool(a["declined"]), a.get("choice"))
        out.append(TraceEntry(run, qid, trace, answer))
    return out


def write_trace(path, bundles: Iterable[tuple[AnswerBundle, int | str | None, str | None]]) -> None:
    """Write ``(bundle, run, question_id)`` triples as trace records."""
    with open(path, "w", encoding="utf-8") as fh:
        for bundle, run, qid in bundles:
            for rec in trace_records(bundle.trace, run, qid, bundle.answer):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_trace(path) -> list[TraceEntry]:
    with open(path, encoding="utf-8") as fh:
        return traces_from_records(json.loads(line) for line in fh if line.strip())
