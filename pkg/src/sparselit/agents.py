"""LLM-driven agents and the tag-delimited formats they exchange.

Every agent prompt carries a ``TASK: <name>`` marker line in its system text
so that scripted providers can tell the agents apart. Structured output is
only read from inside its tags; anything around them (reasoning) is ignored.
"""

from __future__ import annotations

import enum
import re
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

from .corpus import EntityDictionary, EntityMention, find_mentions
from .index import Boost, SearchTermSet, ShouldGroup
from .llm import Gateway, Prompt
from .textproc.chunking import Chunk
from .textproc.tokenize import default_stopwords

PROMPT_VERSION = "1"


class AgentOutputError(ValueError):
    """An agent reply could not be parsed into its structured form."""


class AttributionError(AgentOutputError):
    """An answer cited a document that was not among its supplied summaries."""


class Verdict(str, enum.Enum):
    RETAINED = "retained"
    REJECTED = "rejected"


@dataclass(frozen=True)
class ProposedAnswer:
    text: str
    synonym_expansions: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def query_text(self) -> str:
        """Answer text followed by every synonym, used as a re-ranking query."""
        extra = [s for _, syns in self.synonym_expansions for s in syns]
        return " ".join([self.text, *extra])


@dataclass(frozen=True)
class ChunkSummary:
    chunk_id: str
    doc_id: str
    facts: str
    verdict: Verdict

    @property
    def retained(self) -> bool:
        return self.verdict is Verdict.RETAINED


@dataclass(frozen=True)
class Answer:
    text: str
    attribution: tuple[str, ...] = ()
    declined: bool = False
    choice: str | None = None

    def __post_init__(self):
        if self.declined and self.attribution:
            raise ValueError("a declined answer cannot carry attributions")
        if not self.declined and not self.attribution:
            raise ValueError("an attempted answer needs at least one attribution")

    @classmethod
    def decline(cls, reason: str = "insufficient information") -> "Answer":
        return cls(text=reason, attribution=(), declined=True)


def _retrying(gateway: Gateway, prompt: Prompt, parse):
    """Call, parse; on a parse failure re-prompt once with the reason appended."""
    reply = gateway.complete(prompt).text
    try:
        return parse(reply)
    except AttributionError:
        raise
    except AgentOutputError as first:
        retry = Prompt(
            user=(
                f"{prompt.user}\n\nYour previous reply could not be used: {first}. "
                "Reply again and put the result inside the required tags."
            ),
            system=prompt.system,
            max_output_tokens=prompt.max_output_tokens,
            deterministic=prompt.deterministic,
        )
        reply = gateway.complete(retry).text
        try:
            return parse(reply)
        except AttributionError:
            raise
        except AgentOutputError as exc:
            raise AgentOutputError(f"{exc} (after one retry)") from exc


def _last_block(tag: str, text: str) -> str | None:
    """Inner text of the last ``<tag>...</tag>`` block, or None."""
    blocks = re.findall(rf"<{tag}\b[^>]*>(.*?)</{tag}\s*>", text, flags=re.DOTALL | re.IGNORECASE)
    if blocks:
        return blocks[-1]
    if re.search(rf"<{tag}\s*/>", text, flags=re.IGNORECASE):
        return ""
    return None


def _all_tags(tag: str, text: str) -> list[str]:
    return [s.strip() for s in re.findall(rf"<{tag}\b[^>]*>(.*?)</{tag}\s*>", text, flags=re.DOTALL | re.IGNORECASE)]


# -- NER ----------------------------------------------------------------------


def ner_agent(question: str, dictionary: EntityDictionary) -> list[EntityMention]:
    """Gene and disease mentions in the question, in order of appearance."""
    return find_mentions(question, dictionary, field="question")


# -- search-term markup ---------------------------------------------------------


def parse_search_terms(markup: str) -> SearchTermSet:
    """Parse the ``<terms>`` markup (``must``/``should`` groups of ``term``, ``boost``)."""
    blocks = re.findall(r"<terms\b[^>]*>.*?</terms\s*>|<terms\s*/>", markup, flags=re.DOTALL)
    if not blocks:
        raise AgentOutputError("no <terms> block found")
    try:
        root = ET.fromstring(blocks[-1])
    except ET.ParseError as exc:
        raise AgentOutputError(f"malformed search-term markup: {exc}") from exc
    must, should = [], []
    for pos, element in enumerate(root, start=1):
        if element.tag == "must":
            must.append(_parse_group(element, f"must group {len(must) + 1}", allow_boost=False)[0])
        elif element.tag == "should":
            name = f"should group {len(should) + 1}"
            terms, boost = _parse_group(element, name, allow_boost=True)
            if boost is None:
                raise AgentOutputError(f"{name} has no <boost> element")
            should.append(ShouldGroup(terms, boost))
        else:
            raise AgentOutputError(f"unexpected element <{element.tag}> at position {pos} in <terms>")
    return SearchTermSet(tuple(must), tuple(should))


def _parse_group(element: ET.Element, name: str, allow_boost: bool) -> tuple[tuple[str, ...], Boost | None]:
    terms = []
    boost = None
    for child in element:
        text = (child.text or "").strip()
        if child.tag == "term":
            if not text:
                raise AgentOutputError(f"{name} contains an empty <term>")
            terms.append(text)
        elif child.tag == "boost" and allow_boost:
            if boost is not None:
                raise AgentOutputError(f"{name} has more than one <boost>")
            try:
                boost = Boost(text.upper())
            except ValueError:
                raise AgentOutputError(f"{name} has unknown boost value {text!r}") from None
        else:
            raise AgentOutputError(f"{name} contains unexpected element <{child.tag}>")
    if not terms:
        raise AgentOutputError(f"{name} is empty")
    return tuple(terms), boost


def serialize_search_terms(terms: SearchTermSet) -> str:
    """Render a term set in the canonical two-space-indented markup."""
    lines = ["<terms>"]
    for group in terms.must_groups:
        lines.append("  <must>")
        lines += [f"    <term>{escape(t)}</term>" for t in group]
        lines.append("  </must>")
    for group in terms.should_groups:
        lines.append("  <should>")
        lines += [f"    <term>{escape(t)}</term>" for t in group.terms]
        lines.append(f"    <boost>{group.boost.value}</boost>")
        lines.append("  </should>")
    lines.append("</terms>")
    return "\n".join(lines)


SEARCH_TERMS_SYSTEM = """TASK: search-terms
You turn a research question into keyword search terms for a literature index.
Think step by step, then emit a single <terms> block:
- one <must> element per concept the answer cannot do without, holding the
  keyword and its synonyms as <term> children;
- one <should> element per helpful but optional concept, with its synonyms and
  a <boost> of LOW, MEDIUM or HIGH.
Identifiers listed under IDENTIFIERS are already normalized: use each one as a
single <term> of its own <must> group and do not add synonyms for it."""


def search_terms_prompt(question: str, mentions: Sequence[EntityMention]) -> Prompt:
    lines = [f"QUESTION: {question}", "IDENTIFIERS:"]
    seen = set()
    for m in mentions:
        if m.entity_id in seen:
            continue
        seen.add(m.entity_id)
        lines.append(f"- {m.entity_id} ({m.surface}, {m.entity_type})")
    if not seen:
        lines.append("- none")
    return Prompt(user="\n".join(lines), system=SEARCH_TERMS_SYSTEM)


def inject_identifiers(terms: SearchTermSet, mentions: Sequence[EntityMention]) -> SearchTermSet:
    """Add a must group for every mentioned identifier the reply left out."""
    present = set(terms.all_terms())
    for m in mentions:
        if m.entity_id not in present:
            terms = terms.with_must((m.entity_id,))
            present.add(m.entity_id)
    return terms


def search_terms_agent(question: str, mentions: Sequence[EntityMention], gateway: Gateway) -> SearchTermSet:
    terms = _retrying(gateway, search_terms_prompt(question, mentions), parse_search_terms)
    return inject_identifiers(terms, mentions)


# -- proposed answers -----------------------------------------------------------

SYNONYM_RE = re.compile(r"\s*[(\[]\s*synonyms/abbreviations\s*:\s*([^)\]]*)[)\]]", re.IGNORECASE)
_KEY_TERM_WORDS = 3

PROPOSED_ANSWERS_SYSTEM = """TASK: proposed-answers
Write three diverse, plausible long-form answers to the question from your own
knowledge, each with a short rationale. They may contradict each other. After
every key term add its alternatives as
"(synonyms/abbreviations: a, b, c)".
Wrap the three answers as <answers><answer>...</answer>...</answers>."""


def _key_term(prefix: str) -> str:
    """Up to three words before a synonym list, stopping at punctuation or a stopword."""
    clause = re.split(r"[.,;:!?()\[\]]", prefix)[-1]
    stops = default_stopwords()
    picked: list[str] = []
    for w in reversed(clause.split()):
        if len(picked) == _KEY_TERM_WORDS or w.lower() in stops:
            break
        picked.append(w)
    return " ".join(reversed(picked))


def parse_proposed_answer(text: str) -> ProposedAnswer:
    expansions = []
    for m in SYNONYM_RE.finditer(text):
        synonyms = tuple(s.strip() for s in m.group(1).split(",") if s.strip())
        expansions.append((_key_term(text[: m.start()]), synonyms))
    clean = re.sub(r"\s+", " ", SYNONYM_RE.sub("", text)).strip()
    clean = re.sub(r"\s+([.,;:])", r"\1", clean)
    return ProposedAnswer(clean, tuple(expansions))


def parse_proposed_answers(reply: str) -> list[ProposedAnswer]:
    block = _last_block("answers", reply)
    if block is None:
        raise AgentOutputError("no <answers> block found")
    answers = [parse_proposed_answer(a) for a in _all_tags("answer", block) if a.strip()]
    if len(answers) < 3:
        raise AgentOutputError(f"expected 3 proposed answers, got {len(answers)}")
    return answers[:3]


def proposed_answers_agent(question: str, gateway: Gateway) -> list[ProposedAnswer]:
    prompt = Prompt(user=f"QUESTION: {question}", system=PROPOSED_ANSWERS_SYSTEM)
    return _retrying(gateway, prompt, parse_proposed_answers)


# -- summarization ---------------------------------------------------------------

SUMMARIZE_SYSTEM = """TASK: summarize
Read the article chunk and extract the key facts related to the question.
Reason step by step first. Then finish with exactly one block:
<summary><verdict>retained</verdict><facts>...</facts></summary>
or, if the chunk holds no relevant facts,
<summary><verdict>rejected</verdict></summary>"""


def summarize_prompt(question: str, chunk: Chunk) -> Prompt:
    user = (
        f"QUESTION: {question}\n"
        f'<chunk doc_id="{escape(chunk.doc_id)}" chunk_id="{escape(chunk.chunk_id)}">\n'
        f"{chunk.text}\n</chunk>"
    )
    return Prompt(user=user, system=SUMMARIZE_SYSTEM)


def _summary_parser(chunk: Chunk):
    def parse(reply: str) -> ChunkSummary:
        block = _last_block("summary", reply)
        if block is None:
            raise AgentOutputError("no <summary> block found")
        verdict_text = _last_block("verdict", block)
        if verdict_text is None:
            raise AgentOutputError("summary block lacks a <verdict>")
        try:
            verdict = Verdict(verdict_text.strip().lower())
        except ValueError:
            raise AgentOutputError(f"unknown verdict {verdict_text.strip()!r}") from None
        if verdict is Verdict.REJECTED:
            return ChunkSummary(chunk.chunk_id, chunk.doc_id, "", verdict)
        facts = (_last_block("facts", block) or "").strip()
        if not facts:
            raise AgentOutputError("retained summary has no <facts>")
        return ChunkSummary(chunk.chunk_id, chunk.doc_id, facts, verdict)

    return parse


def summarize_agent(question: str, chunk: Chunk, gateway: Gateway) -> ChunkSummary:
    return _retrying(gateway, summarize_prompt(question, chunk), _summary_parser(chunk))


def summarize_all(question: str, chunks: Sequence[Chunk], gateway: Gateway) -> list[ChunkSummary]:
    """Summaries of ``chunks`` in input order, issued concurrently up to the gateway ceiling."""
    if not chunks:
        return []
    with ThreadPoolExecutor(max_workers=min(gateway.max_concurrent, len(chunks))) as pool:
        return list(pool.map(lambda c: summarize_agent(question, c, gateway), chunks))


# -- deduplication ---------------------------------------------------------------

DEDUP_SYSTEM = """TASK: deduplicate
You receive a small set of article-chunk summaries. Merge duplicated facts
mentally and list the chunks worth keeping: drop any chunk that adds no new
information compared with the other chunks in the set. Reason first, then
answer with <dedup><keep>chunk_id</keep>...</dedup>."""


def _summary_block(s: ChunkSummary) -> str:
    return f'<summary doc_id="{escape(s.doc_id)}" chunk_id="{escape(s.chunk_id)}">{escape(s.facts)}</summary>'


def dedup_agent(
    question: str, summaries: Sequence[ChunkSummary], gateway: Gateway, set_size: int = 3
) -> list[ChunkSummary]:
    """Drop redundant summaries within consecutive windows of ``set_size``.

    Rejected summaries are discarded up front; single-member windows pass
    through without a call. Order is preserved.
    """
    if set_size < 2:
        raise ValueError("set_size must be >= 2")
    kept_input = [s for s in summaries if s.retained]
    out: list[ChunkSummary] = []
    for start in range(0, len(kept_input), set_size):
        window = kept_input[start : start + set_size]
        if len(window) == 1:
            out.extend(window)
            continue
        ids = {s.chunk_id for s in window}
        user = f"QUESTION: {question}\n" + "\n".join(_summary_block(s) for s in window)

        def parse(reply: str, ids=ids) -> set[str]:
            block = _last_block("dedup", reply)
            if block is None:
                raise AgentOutputError("no <dedup> block found")
            keep = {k for k in _all_tags("keep", block) if k}
            unknown = keep - ids
            if unknown:
                raise AgentOutputError(f"dedup kept unknown chunk ids {sorted(unknown)}")
            if not keep:
                raise AgentOutputError("dedup kept no chunk")
            return keep

        keep = _retrying(gateway, Prompt(user=user, system=DEDUP_SYSTEM), parse)
        out.extend(s for s in window if s.chunk_id in keep)
    return out


# -- answering -------------------------------------------------------------------

ANSWER_SYSTEM = """TASK: answer
Answer the question using only the supplied summaries. Reason first, then give
<answer><text>...</text><cite>doc_id</cite>...</answer>, citing every document
the answer relies on. If multiple-choice OPTIONS are given, also add
<choice>letter</choice>. If the summaries do not support an answer, reply
<answer><declined>insufficient information</declined></answer>."""

OPTION_LABELS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def answer_prompt(question: str, summaries: Sequence[ChunkSummary], options: Sequence[str] | None) -> Prompt:
    parts = [f"QUESTION: {question}"]
    if options:
        parts.append("OPTIONS:")
        parts += [f"{OPTION_LABELS[i]}) {opt}" for i, opt in enumerate(options)]
    parts.append("SUMMARIES:")
    parts += [_summary_block(s) for s in summaries]
    return Prompt(user="\n".join(parts), system=ANSWER_SYSTEM)


def _answer_parser(doc_ids: set[str], options: Sequence[str] | None):
    def parse(reply: str) -> Answer:
        block = _last_block("answer", reply)
        if block is None:
            raise AgentOutputError("no <answer> block found")
        declined = _last_block("declined", block)
        if declined is not None:
            return Answer.decline(declined.strip() or "insufficient information")
        text = (_last_block("text", block) or "").strip()
        if not text:
            raise AgentOutputError("answer has no <text>")
        cites = []
        for c in _all_tags("cite", block):
            if c and c not in cites:
                cites.append(c)
        if not cites:
            raise AgentOutputError("answer cites no document")
        unknown = [c for c in cites if c not in doc_ids]
        if unknown:
            raise AttributionError(f"answer cites documents outside the supplied summaries: {unknown}")
        choice = None
        if options:
            label = (_last_block("choice", block) or "").strip().upper().rstrip(")")
            if label not in OPTION_LABELS[: len(options)] or not label:
                raise AgentOutputError(f"invalid or missing <choice> {label!r}")
            choice = options[OPTION_LABELS.index(label)]
        return Answer(text, tuple(cites), False, choice)

    return parse


def answer_agent(
    question: str,
    summaries: Sequence[ChunkSummary],
    gateway: Gateway,
    multiple_choice: Sequence[str] | None = None,
) -> Answer:
    """Answer from retained summaries; attributions must come from them."""
    retained = [s for s in summaries if s.retained]
    if not retained:
        return Answer.decline()
    parse = _answer_parser({s.doc_id for s in retained}, multiple_choice)
    return _retrying(gateway, answer_prompt(question, retained, multiple_choice), parse)
