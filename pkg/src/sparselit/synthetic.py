"""Deterministic planted corpora with matching mock scripts.

Each benchmark question targets one gene. Its gold document carries a key
sentence with the answer; hard distractors mention the same gene, organism
and structure without the answer. The mock script plays every agent for
every question, so the whole pipeline runs offline.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Document, EntityDictionary, Section, write_corpus, write_dictionary
from .evaluation import BenchmarkRecord, ReviewRecord, write_records
from .llm import MockProvider, MockRule, write_mock_script
from .textproc.porter2 import stem
from .textproc.tokenize import default_stopwords

ORGANISMS = [
    ("zebrafish", "Danio rerio"),
    ("mouse", "Mus musculus"),
    ("fruit fly", "Drosophila"),
    ("nematode", "Caenorhabditis"),
    ("frog", "Xenopus"),
]
TISSUES = ["embryos", "retina", "kidney", "liver", "heart", "cortex"]
STRUCTURES = [
    ("cilia", "ciliary"),
    ("mitochondria", "mitochondrial"),
    ("synapses", "synaptic"),
    ("vessels", "vascular"),
    ("myelin", "myelinated"),
    ("lysosomes", "lysosomal"),
]
OUTCOMES = [
    ("shorter", ["truncated", "stunted", "reduced length"]),
    ("longer", ["elongated", "extended", "overgrown"]),
    ("thicker", ["widened", "enlarged", "broadened"]),
    ("fragmented", ["fractured", "dispersed", "broken"]),
    ("clustered", ["aggregated", "bundled", "grouped"]),
    ("sparse", ["depleted", "scarce", "diminished"]),
]
SECTION_HEADINGS = ["Introduction", "Methods", "Results", "Discussion"]

_ONSETS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class PlantedQuestion:
    record: BenchmarkRecord
    gene: str
    entity_id: str
    organism: tuple[str, str]
    tissue: str
    structure: tuple[str, str]
    outcome: str
    key_passage: str
    distractor_outcomes: tuple[str, str]
    retained_distractor: str | None


@dataclass(frozen=True)
class CoveFixture:
    question: str
    statements: tuple[str, ...]
    verification_questions: tuple[str, ...]
    expects_new: bool
    review: ReviewRecord


@dataclass
class PlantedCorpus:
    docs: list[Document]
    dictionary: EntityDictionary
    questions: list[PlantedQuestion]
    rules: list[MockRule]
    cove_fixtures: list[CoveFixture] = field(default_factory=list)

    @property
    def records(self) -> list[BenchmarkRecord]:
        return [q.record for q in self.questions]

    def provider(self) -> MockProvider:
        return MockProvider(self.rules)

    def write(self, directory: str | Path) -> dict[str, Path]:
        """Write corpus, dictionary, questions, reviews and mock script files."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": d / "corpus.jsonl",
            "dictionary": d / "dictionary.tsv",
            "questions": d / "questions.jsonl",
            "reviews": d / "reviews.jsonl",
            "mock_script": d / "mock_script.jsonl",
        }
        write_corpus(self.docs, paths["corpus"])
        write_dictionary(self.dictionary, paths["dictionary"])
        write_records(self.records, paths["questions"])
        write_records([f.review for f in self.cove_fixtures], paths["reviews"])
        write_mock_script(self.provider(), paths["mock_script"])
        return paths


class _Words:
    """Pseudo-words whose stems are pairwise distinct and never stopwords."""

    def __init__(self, rng: random.Random, reserved: set[str]):
        self.rng = rng
        self.stems = {stem(w) for w in reserved}
        self.stop = default_stopwords()

    def make(self) -> str:
        while True:
            n = self.rng.randint(2, 4)
            w = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(n))
            w += self.rng.choice(["", "n", "l", "r", "x"])
            s = stem(w)
            if w not in self.stop and s not in self.stems and s not in self.stop:
                self.stems.add(s)
                return w


def _reserved_words() -> set[str]:
    words = {"knockdown", "knocked", "down", "wild", "type", "phenotype", "controls", "compared"}
    for org in ORGANISMS:
        words.update(" ".join(org).lower().split())
    words.update(TISSUES)
    for pair in STRUCTURES:
        words.update(pair)
    for outcome, syns in OUTCOMES:
        words.add(outcome)
        for s in syns:
            words.update(s.split())
    return words


def _sentence(rng: random.Random, vocab: list[str], extra: list[str] = (), lo: int = 9, hi: int = 16) -> str:
    words = [rng.choice(vocab) for _ in range(rng.randint(lo, hi))]
    for w in extra:
        words.insert(rng.randint(0, len(words)), w)
    words[0] = words[0][0].upper() + words[0][1:]
    return " ".join(words) + "."


def _paragraph(rng, vocab, n_sentences, extra_sentences=()) -> str:
    sents = [_sentence(rng, vocab) for _ in range(n_sentences)]
    for s in extra_sentences:
        sents.insert(rng.randint(0, len(sents)), s)
    return " ".join(sents)


def question_text(gene: str, organism: str, tissue: str, structure_adj: str) -> str:
    return (
        f"Relative to wild type {organism} {tissue}, those with {gene} knocked down "
        f"display what {structure_adj} phenotype?"
    )


def _terms_markup(q: PlantedQuestion) -> str:
    org, latin = q.organism
    noun, adj = q.structure
    return "\n".join(
        [
            "Reasoning: the organism and the structure are required; the gene is fixed by its identifier.",
            "<terms>",
            "  <must>",
            f"    <term>{org}</term>",
            f"    <term>{latin}</term>",
            "  </must>",
            "  <must>",
            f"    <term>{noun}</term>",
            f"    <term>{adj}</term>",
            "  </must>",
            "  <must>",
            f"    <term>{q.entity_id}</term>",
            "  </must>",
            "  <should>",
            f"    <term>{q.tissue}</term>",
            "    <boost>MEDIUM</boost>",
            "  </should>",
            "  <should>",
            "    <term>knockdown</term>",
            "    <term>knocked down</term>",
            "    <term>silencing</term>",
            "    <boost>HIGH</boost>",
            "  </should>",
            "  <should>",
            "    <term>phenotype</term>",
            "    <term>morphology</term>",
            "    <boost>LOW</boost>",
            "  </should>",
            "</terms>",
        ]
    )


def _proposed_markup(q: PlantedQuestion) -> str:
    noun, _ = q.structure
    syn = dict(OUTCOMES)
    answers = []
    for outcome in (q.outcome, *q.distractor_outcomes):
        answers.append(
            f"{q.gene} knockdown {q.organism[0]} {q.tissue} likely display {outcome} {noun} "
            f"(synonyms/abbreviations: {', '.join(f'{s} {noun}' for s in syn[outcome])}) "
            f"as the main phenotype."
        )
    body = "".join(f"<answer>{a}</answer>" for a in answers)
    return f"Three plausible answers follow.\n<answers>{body}</answers>"


def _summary_retained(facts: str) -> str:
    return f"The chunk is relevant.\n<summary><verdict>retained</verdict><facts>{facts}</facts></summary>"


def question_rules(q: PlantedQuestion, gold_doc: str) -> list[MockRule]:
    """Scripted replies for every agent call made while answering ``q``."""
    text = q.record.question
    head = f"QUESTION: {text}\n"
    rules = [
        MockRule(_terms_markup(q), ("TASK: search-terms", head)),
        MockRule(_proposed_markup(q), ("TASK: proposed-answers", f"QUESTION: {text}")),
        MockRule(_summary_retained(q.key_passage), ("TASK: summarize", head, q.key_passage)),
    ]
    if q.retained_distractor:
        rules.append(
            MockRule(
                _summary_retained(f"{q.gene} was studied in {q.organism[0]} {q.tissue} without a clear outcome."),
                ("TASK: summarize", head, f'doc_id="{q.retained_distractor}"'),
            )
        )
    choice = ""
    if q.record.options:
        choice = f"<choice>{'ABCDEFGH'[q.record.options.index(q.record.correct_option)]}</choice>"
    rules.append(
        MockRule(
            f"The retained summary states the outcome.\n<answer><text>{q.key_passage}</text>"
            f"<cite>{gold_doc}</cite>{choice}</answer>",
            ("TASK: answer", head, f'doc_id="{gold_doc}"'),
        )
    )
    return rules


def fallback_rules() -> list[MockRule]:
    return [
        MockRule("Nothing relevant.\n<summary><verdict>rejected</verdict></summary>", ("TASK: summarize",)),
        MockRule(
            "<answer><declined>insufficient information</declined></answer>", ("TASK: answer",)
        ),
        MockRule(
            "Only the first chunk adds information.\n<dedup><keep>$first</keep></dedup>",
            ("TASK: deduplicate",),
            regex=r'chunk_id="(?P<first>[^"]+)"',
        ),
    ]


def make_planted_corpus(
    n_docs: int = 500,
    n_questions: int = 50,
    hard_distractors: int = 5,
    n_cove: int = 20,
    seed: int = 7,
) -> PlantedCorpus:
    """Generate ``n_docs`` documents, ``n_questions`` planted questions and CoVe fixtures."""
    if n_docs < n_questions * (1 + hard_distractors):
        raise ValueError("n_docs too small for the requested questions and distractors")
    rng = random.Random(seed)
    words = _Words(rng, _reserved_words())
    vocab = [words.make() for _ in range(1500)]
    genes, dictionary = [], EntityDictionary()
    for i in range(n_questions):
        symbol = words.make()[:3].capitalize() + str(i + 1)
        entity_id = f"ENSEMBL:ENSG{10_000_000_000 + 7919 * (i + 1):011d}"
        alias = f"{words.make()} kinase {i + 1}"
        dictionary.add(symbol, entity_id, "gene")
        dictionary.add(alias, entity_id, "gene")
        genes.append((symbol, entity_id))
    for _ in range(5):
        dictionary.add(f"{words.make()} syndrome", f"MONDO:{rng.randint(1000, 9999):07d}", "disease")

    def date() -> dt.date:
        return dt.date(2000, 1, 1) + dt.timedelta(days=rng.randrange(24 * 365))

    questions: list[PlantedQuestion] = []
    docs: list[Document] = []
    doc_no = 0

    def next_id() -> str:
        nonlocal doc_no
        doc_no += 1
        return f"PMID{30000000 + doc_no * 37}"

    def full_text(doc_id, title, extra_results=(), extra_any=()) -> Document:
        sections = []
        for k, heading in enumerate(SECTION_HEADINGS):
            placed = list(extra_results) if heading == "Results" else []
            if k == 0:
                placed += list(extra_any)
            sections.append(Section(f"s{k + 1}", heading, _paragraph(rng, vocab, rng.randint(4, 8), placed)))
        abstract = _paragraph(rng, vocab, 3, list(extra_any)[:1])
        return Document(doc_id, title, abstract, date(), tuple(sections))

    for i, (gene, entity_id) in enumerate(genes):
        organism = ORGANISMS[i % len(ORGANISMS)]
        tissue = TISSUES[(i // len(ORGANISMS)) % len(TISSUES)]
        structure = STRUCTURES[i % len(STRUCTURES)]
        outcome_ix = rng.sample(range(len(OUTCOMES)), 3)
        outcome, wrong1, wrong2 = (OUTCOMES[j][0] for j in outcome_ix)
        noun, adj = structure
        key = (
            f"Knockdown of {gene} in {organism[0]} {tissue} produced {outcome} {noun} "
            f"compared with wild type controls."
        )
        gold_id = next_id()
        context = f"We examined {adj} structure in {organism[0]} {tissue} after silencing {gene}."
        gold = full_text(gold_id, f"{gene} shapes {adj} {noun} in {organism[0]}", [key], [context])
        docs.append(gold)
        distractor_ids = []
        for _ in range(hard_distractors):
            did = next_id()
            near = (
                f"Knockdown of {gene} in {organism[0]} {tissue} left {noun} numbers unchanged "
                f"and wild type {adj} morphology was preserved."
            )
            docs.append(full_text(did, f"{gene} and {adj} {noun}", [near], [context]))
            distractor_ids.append(did)
        options = [outcome, wrong1, wrong2]
        rng.shuffle(options)
        text = question_text(gene, organism[0], tissue, adj)
        rec = BenchmarkRecord(
            question=text,
            gold_doc_id=gold_id,
            key_passage=key,
            options=tuple(f"{o} {noun}" for o in options),
            correct_option=f"{outcome} {noun}",
            question_id=f"Q{i + 1:03d}",
        )
        questions.append(
            PlantedQuestion(rec, gene, entity_id, organism, tissue, structure, outcome, key,
                            (wrong1, wrong2), distractor_ids[0] if distractor_ids else None)
        )

    while len(docs) < n_docs:
        did = next_id()
        extra = []
        for q in rng.sample(questions, 2):
            # half the mentions reuse the question's own organism and structure so
            # they survive the must filter and compete at re-ranking
            if rng.random() < 0.5:
                org, struct = q.organism[0], q.structure
            else:
                org, struct = rng.choice(ORGANISMS)[0], rng.choice(STRUCTURES)
            extra.append(f"Expression of {q.gene} was measured in {org} {rng.choice(TISSUES)} {struct[0]}.")
        title = f"{_sentence(rng, vocab, lo=4, hi=7)[:-1]}"
        if rng.random() < 0.4:
            abstract = _paragraph(rng, vocab, rng.randint(4, 7), extra)
            docs.append(Document(did, title, abstract, date()))
        else:
            docs.append(full_text(did, title, extra_any=extra))

    rules: list[MockRule] = []
    for q in questions:
        rules += question_rules(q, q.record.gold_doc_id)
    cove_fixtures = _cove_fixtures(questions, n_cove, rng)
    for fx in cove_fixtures:
        rules += cove_rules(fx)
    rules += fallback_rules()
    return PlantedCorpus(docs, dictionary, questions, rules, cove_fixtures)


def _statement(q: PlantedQuestion) -> str:
    return f"{q.gene} knockdown yields {q.outcome} {q.structure[0]} in {q.organism[0]} {q.tissue}"


def _cove_fixtures(questions: list[PlantedQuestion], n: int, rng: random.Random) -> list[CoveFixture]:
    out = []
    nq = len(questions)
    for i in range(min(n, nq)):
        q = questions[i]
        expects_new = i % 5 != 4
        if expects_new:
            others = [questions[(i + 1) % nq], questions[(i + 7) % nq]]
            verify = tuple(o.record.question for o in others)
        else:
            others = []
            verify = (q.record.question,)
        statements = tuple(
            [_statement(q)] + [f"A related finding: {_statement(o)}" for o in others]
        )[: len(verify)]
        primary = {q.record.gold_doc_id} | {o.record.gold_doc_id for o in others}
        primary |= {f"PMID{90000000 + 11 * i + k}" for k in range(2)}  # references outside the corpus
        secondary = {d for d in (q.retained_distractor, *(o.retained_distractor for o in others)) if d}
        review = ReviewRecord(
            review_id=f"R{i + 1:03d}",
            derived_question=q.record.question,
            cutoff_date=dt.date(2024, 1, 1),
            primary_refs=frozenset(primary),
            secondary_refs=frozenset(secondary - primary),
        )
        out.append(CoveFixture(q.record.question, statements, verify, expects_new, review))
    return out


def cove_rules(fx: CoveFixture) -> list[MockRule]:
    head = f"QUESTION: {fx.question}\n"
    plan = "".join(f"<statement>{s}</statement>" for s in fx.statements)
    pairs = "\n".join(f"STATEMENT: {s} | QUESTION: {v}" for s, v in zip(fx.statements, fx.verification_questions))
    return [
        MockRule(f"Key claims:\n<statements>{plan}</statements>", ("TASK: plan-statements", head)),
        MockRule(f"<questions>\n{pairs}\n</questions>", ("TASK: statements-to-questions", f"<statement>{fx.statements[0]}</statement>")),
        MockRule(
            f"<final>Verified: {'. '.join(fx.statements)}.</final>", ("TASK: final-response", head)
        ),
    ]


def write_planted(directory: str | Path, **kwargs) -> dict[str, Path]:
    corpus = make_planted_corpus(**kwargs)
    paths = corpus.write(directory)
    meta = Path(directory) / "fixture.json"
    meta.write_text(
        json.dumps(
            {
                "n_docs": len(corpus.docs),
                "n_questions": len(corpus.questions),
                "cove_fixtures": [
                    {"question": f.question, "expects_new": f.expects_new, "review_id": f.review.review_id}
                    for f in corpus.cove_fixtures
                ],
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    paths["fixture"] = meta
    return paths
