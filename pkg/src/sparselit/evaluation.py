"""Benchmark measurements: rank CDFs, stage recall, QA metrics and reference recall."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .agents import Answer
from .corpus import Document
from .pipeline import STAGES, CoveResult, StageTrace
from .textproc.chunking import ChunkingConfig, chunk_document

Z95 = 1.959963984540054
CI_METHOD = "normal approximation: mean +/- 1.95996 * sample sd / sqrt(repeats), clipped to [0, 1]"


@dataclass(frozen=True)
class BenchmarkRecord:
    question: str
    gold_doc_id: str | None = None
    key_passage: str | None = None
    options: tuple[str, ...] | None = None
    correct_option: str | None = None
    question_id: str | None = None

    def __post_init__(self):
        if self.gold_doc_id is None and self.correct_option is None:
            raise ValueError("a benchmark record needs gold_doc_id or correct_option")
        if self.correct_option is not None and self.options and self.correct_option not in self.options:
            raise ValueError(f"correct_option {self.correct_option!r} is not one of the options")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkRecord":
        opts = d.get("options")
        return cls(
            question=d["question"],
            gold_doc_id=d.get("gold_doc_id"),
            key_passage=d.get("key_passage"),
            options=tuple(opts) if opts else None,
            correct_option=d.get("correct_option"),
            question_id=d.get("question_id"),
        )

    def to_dict(self) -> dict:
        d = {"question": self.question}
        for k in ("question_id", "gold_doc_id", "key_passage", "correct_option"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        if self.options:
            d["options"] = list(self.options)
        return d


@dataclass(frozen=True)
class ReviewRecord:
    review_id: str
    derived_question: str
    cutoff_date: dt.date | None
    primary_refs: frozenset[str]
    secondary_refs: frozenset[str] = frozenset()
    overlap_allowed: bool = False

    def __post_init__(self):
        if not self.overlap_allowed and self.primary_refs & self.secondary_refs:
            shared = sorted(self.primary_refs & self.secondary_refs)
            raise ValueError(f"review {self.review_id}: primary and secondary refs overlap on {shared}")

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewRecord":
        cutoff = d.get("cutoff_date")
        return cls(
            review_id=str(d["review_id"]),
            derived_question=d["derived_question"],
            cutoff_date=dt.date.fromisoformat(cutoff) if cutoff else None,
            primary_refs=frozenset(d.get("primary_refs", ())),
            secondary_refs=frozenset(d.get("secondary_refs", ())),
            overlap_allowed=bool(d.get("overlap_allowed", False)),
        )

    def to_dict(self) -> dict:
        return {
            "review_id": self.review_id,
            "derived_question": self.derived_question,
            "cutoff_date": self.cutoff_date.isoformat() if self.cutoff_date else None,
            "primary_refs": sorted(self.primary_refs),
            "secondary_refs": sorted(self.secondary_refs),
            "overlap_allowed": self.overlap_allowed,
        }


@dataclass(frozen=True)
class CdfRow:
    rank: int
    mean: float
    low: float
    high: float


@dataclass(frozen=True)
class QaMetrics:
    accuracy: float
    coverage: float
    precision: float | None
    correct: int
    attempted: int
    total: int

    @property
    def totals(self) -> tuple[int, int, int]:
        return (self.correct, self.attempted, self.total)


@dataclass(frozen=True)
class StageRecall:
    stage: str
    recall: float
    low: float
    high: float
    mean_found: float
    total: int
    available: int | None = None


@dataclass(frozen=True)
class ReferenceRecall:
    review_id: str
    initial: float | None
    cove: float | None
    initial_with_secondary: float | None
    cove_with_secondary: float | None


def mean_interval(values: Sequence[float], bounded: bool = True) -> tuple[float, float, float]:
    """Mean and 95% normal-approximation bounds; zero width for a single value."""
    if not values:
        raise ValueError("no values to summarize")
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, mean, mean
    half = Z95 * statistics.stdev(values) / math.sqrt(len(values))
    low, high = mean - half, mean + half
    if bounded:
        low, high = max(0.0, low), min(1.0, high)
    return mean, min(low, mean), max(high, mean)


def _split_repeats(items: Sequence, n_questions: int, repeats: int) -> list[Sequence]:
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if len(items) != n_questions * repeats:
        raise ValueError(
            f"expected {n_questions} x {repeats} = {n_questions * repeats} traces, got {len(items)}"
        )
    return [items[r * n_questions : (r + 1) * n_questions] for r in range(repeats)]


def rank_cdf(ranks_by_repeat: Sequence[Sequence[int | None]], max_rank: int) -> list[CdfRow]:
    """CDF over questions of a 1-based rank, one sample per repeat.

    ``None`` (not found) and ranks beyond ``max_rank`` add no mass.
    """
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    if not ranks_by_repeat:
        raise ValueError("need at least one repeat")
    curves = []
    for ranks in ranks_by_repeat:
        n = len(ranks)
        counts = [0] * (max_rank + 1)
        for r in ranks:
            if r is not None and 1 <= r <= max_rank:
                counts[r] += 1
        acc, curve = 0, []
        for r in range(1, max_rank + 1):
            acc += counts[r]
            curve.append(acc / n if n else 0.0)
        curves.append(curve)
    rows = []
    for r in range(max_rank):
        mean, low, high = mean_interval([c[r] for c in curves])
        rows.append(CdfRow(r + 1, mean, low, high))
    return rows


def source_rank_cdf(
    traces: Sequence[StageTrace], gold: Sequence[str | None], max_rank: int = 200, repeats: int = 1
) -> list[CdfRow]:
    """CDF of the gold document's search rank; ``traces`` are in repeat blocks."""
    blocks = _split_repeats(traces, len(gold), repeats)
    ranks = [
        [t.search_rank(g) if g is not None else None for t, g in zip(block, gold)] for block in blocks
    ]
    return rank_cdf(ranks, max_rank)


def chunk_rank(trace: StageTrace, gold_chunks: Iterable[str]) -> int | None:
    """Best 1-based rerank position of any gold chunk."""
    wanted = set(gold_chunks)
    for rank, (chunk_id, _, _) in enumerate(trace.reranked, start=1):
        if chunk_id in wanted:
            return rank
    return None


def gold_chunk_ids(doc: Document, key_passage: str, cfg: ChunkingConfig | None = None) -> list[str]:
    """Ids of the chunks of ``doc`` whose text contains ``key_passage``."""
    needle = " ".join(key_passage.split())
    return [c.chunk_id for c in chunk_document(doc, cfg) if needle in " ".join(c.text.split())]


def chunk_rank_cdf(
    traces: Sequence[StageTrace],
    gold_chunks: Sequence[Iterable[str]],
    max_rank: int = 30,
    repeats: int = 1,
) -> list[CdfRow]:
    blocks = _split_repeats(traces, len(gold_chunks), repeats)
    ranks = [[chunk_rank(t, g) for t, g in zip(block, gold_chunks)] for block in blocks]
    return rank_cdf(ranks, max_rank)


def _stage_ids(trace: StageTrace, stage: str) -> set[str]:
    if stage == "search":
        return set(trace.search_doc_ids)
    if stage == "rerank":
        return set(trace.reranked_doc_ids)
    if stage == "retained":
        return set(trace.retained_doc_ids)
    if stage == "attributed":
        return set(trace.attributed_doc_ids)
    raise ValueError(f"unknown stage {stage!r}")


def stage_recall(
    traces: Sequence[StageTrace],
    gold: Sequence[str | None],
    repeats: int = 1,
    available: Iterable[str] | None = None,
) -> list[StageRecall]:
    """Fraction of questions whose gold document survives each stage.

    Gold documents missing from the corpus stay in the denominator; pass the
    corpus ids as ``available`` to have the findable count reported.
    """
    blocks = _split_repeats(traces, len(gold), repeats)
    n_available = None
    if available is not None:
        pool = set(available)
        n_available = sum(1 for g in gold if g is not None and g in pool)
    rows = []
    for stage in STAGES:
        fractions, founds = [], []
        for block in blocks:
            found = sum(1 for t, g in zip(block, gold) if g is not None and g in _stage_ids(t, stage))
            founds.append(found)
            fractions.append(found / len(gold) if gold else 0.0)
        mean, low, high = mean_interval(fractions)
        rows.append(StageRecall(stage, mean, low, high, statistics.fmean(founds), len(gold), n_available))
    return rows


def qa_metrics(results: Iterable[tuple[bool, bool]]) -> QaMetrics:
    """Accuracy, coverage and precision from ``(answered, correct)`` pairs."""
    correct = attempted = total = 0
    for i, (answered, ok) in enumerate(results):
        if ok and not answered:
            raise ValueError(f"result {i}: marked correct but not answered")
        total += 1
        attempted += bool(answered)
        correct += bool(ok)
    return metrics_from_counts(correct, attempted, total)


def metrics_from_counts(correct: int, attempted: int, total: int) -> QaMetrics:
    if not 0 <= correct <= attempted <= total:
        raise ValueError(f"need 0 <= correct <= attempted <= total, got {correct}, {attempted}, {total}")
    accuracy = correct / total if total else 0.0
    coverage = attempted / total if total else 0.0
    precision = correct / attempted if attempted else None
    return QaMetrics(accuracy, coverage, precision, correct, attempted, total)


def is_correct(answer: Answer, record: BenchmarkRecord) -> bool:
    """Multiple-choice records compare the chosen option; others need the gold citation."""
    if answer.declined:
        return False
    if record.correct_option is not None:
        return answer.choice == record.correct_option
    return record.gold_doc_id in answer.attribution


def _recall(found: frozenset[str] | set[str], gold: frozenset[str]) -> float | None:
    if not gold:
        return None
    return len(found & gold) / len(gold)


def reference_recall(result: CoveResult, review: ReviewRecord) -> ReferenceRecall:
    """Recall of the review's references by the draft and by the CoVe union."""
    both = review.primary_refs | review.secondary_refs
    return ReferenceRecall(
        review.review_id,
        _recall(result.draft_references, review.primary_refs),
        _recall(result.reference_union, review.primary_refs),
        _recall(result.draft_references, both),
        _recall(result.reference_union, both),
    )


def total_hits_summary(traces: Sequence[StageTrace]) -> dict:
    """Distribution of candidate-set sizes before truncation."""
    hits = sorted(t.total_hits for t in traces)
    if not hits:
        return {"n": 0}
    return {
        "n": len(hits),
        "min": hits[0],
        "median": statistics.median(hits),
        "max": hits[-1],
        "mean": statistics.fmean(hits),
    }


# -- file formats ----------------------------------------------------------------


def _read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return out


def load_benchmark_records(path: str | Path) -> list[BenchmarkRecord]:
    recs = []
    for i, d in enumerate(_read_jsonl(path), start=1):
        try:
            recs.append(BenchmarkRecord.from_dict(d))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: record {i}: {exc}") from exc
    return recs


def load_review_records(path: str | Path) -> list[ReviewRecord]:
    recs = []
    for i, d in enumerate(_read_jsonl(path), start=1):
        try:
            recs.append(ReviewRecord.from_dict(d))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: record {i}: {exc}") from exc
    return recs


def write_records(records: Iterable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def _fmt(x: float | None, scale: float = 1.0, digits: int = 6) -> str:
    return "" if x is None else f"{x * scale:.{digits}f}"


def write_cdf_csv(rows: Sequence[CdfRow], path: str | Path, single: bool = False) -> None:
    """``Rank,Mean,Low,High``; ``single`` writes ``Rank,Cumulative Probability``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if single:
            w.writerow(["Rank", "Cumulative Probability"])
            w.writerows([r.rank, _fmt(r.mean)] for r in rows)
        else:
            w.writerow(["Rank", "Mean", "Low", "High"])
            w.writerows([r.rank, _fmt(r.mean), _fmt(r.low), _fmt(r.high)] for r in rows)


def read_cdf_csv(path: str | Path) -> list[CdfRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = []
        for d in csv.DictReader(fh):
            if "Mean" in d:
                rows.append(CdfRow(int(d["Rank"]), float(d["Mean"]), float(d["Low"]), float(d["High"])))
            else:
                p = float(d["Cumulative Probability"])
                rows.append(CdfRow(int(d["Rank"]), p, p, p))
        return rows


def write_stage_recall_csv(rows: Sequence[StageRecall], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Stage", "Recall", "Low", "High", "Found", "Total", "Available"])
        for r in rows:
            w.writerow(
                [r.stage, _fmt(r.recall), _fmt(r.low), _fmt(r.high), f"{r.mean_found:g}", r.total,
                 "" if r.available is None else r.available]
            )


def write_metrics_csv(metrics: QaMetrics, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Accuracy", "Coverage", "Precision", "Correct", "Attempted", "Total"])
        w.writerow([_fmt(metrics.accuracy), _fmt(metrics.coverage), _fmt(metrics.precision),
                    metrics.correct, metrics.attempted, metrics.total])


REFERENCE_COLUMNS = ["PMID", "Initial recall", "All recall", "Initial with parents recall", "All with parents recall"]


def write_reference_recall_csv(rows: Sequence[ReferenceRecall], path: str | Path) -> None:
    """Recall table in percent; absent values (empty gold set) are left blank."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REFERENCE_COLUMNS)
        for r in rows:
            w.writerow(
                [r.review_id] + [_fmt(v, 100.0, 1) for v in
                                 (r.initial, r.cove, r.initial_with_secondary, r.cove_with_secondary)]
            )


def write_summary(path: str | Path, payload: Mapping) -> None:
    body = {"ci_method": CI_METHOD, **payload}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")


def _default(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: getattr(obj, k) for k in obj.__dataclass_fields__}
    raise TypeError(f"cannot serialize {type(obj).__name__}")
