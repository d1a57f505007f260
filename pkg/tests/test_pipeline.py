import dataclasses
import datetime as dt

import pytest

from conftest import PLANTED_CHUNKING
from sparselit.agents import Answer
from sparselit.index import Granularity, build_index
from sparselit.llm import Gateway, MockRule, mock_provider
from sparselit.pipeline import (
    AnswerBundle,
    AskConfig,
    StageTrace,
    ask,
    collect_references,
    cove,
    read_trace,
    trace_records,
    traces_from_records,
    write_trace,
)

NO_MATCH_TERMS = "<terms><must><term>qqxqqzz</term></must></terms>"


@pytest.fixture
def cfg():
    return AskConfig(chunking=PLANTED_CHUNKING)


def gateway(planted):
    return Gateway(planted.provider())


def test_ask_end_to_end(small_planted, small_index, cfg):
    for q in small_planted.questions:
        g = gateway(small_planted)
        b = ask(q.record.question, small_index, None, None, g, cfg, q.record.options)
        assert not b.answer.declined
        assert b.answer.attribution == (q.record.gold_doc_id,)
        assert b.answer.choice == q.record.correct_option
        assert b.trace.search_rank(q.record.gold_doc_id) is not None
        assert q.entity_id in {t for grp in b.trace.term_set.must_groups for t in grp}
        assert len(b.trace.proposed) == 3
        assert all(s.retained for s in b.retained)


def funnel_holds(t: StageTrace) -> bool:
    return (
        set(t.attributed_doc_ids) <= set(t.retained_doc_ids)
        <= set(t.reranked_doc_ids) <= set(t.search_doc_ids)
    )


def test_funnel_invariant(small_planted, small_index, cfg):
    for q in small_planted.questions:
        assert funnel_holds(ask(q.record.question, small_index, None, None, gateway(small_planted), cfg).trace)


def test_unmatched_must_declines_without_further_calls(small_index, cfg):
    g = Gateway(mock_provider([MockRule(NO_MATCH_TERMS, contains=("TASK: search-terms",))]))
    b = ask("what about qqxqqzz?", small_index, None, None, g, cfg)
    assert b.answer.declined and b.trace.search_hits == () and b.trace.total_hits == 0
    assert g.requests == 1


def test_cutoff_before_all_dates_declines(small_planted, small_index, cfg):
    early = dataclasses.replace(cfg, date_cutoff=dt.date(1900, 1, 1))
    q = small_planted.questions[0]
    b = ask(q.record.question, small_index, None, None, gateway(small_planted), early)
    assert b.answer.declined and funnel_holds(b.trace)


def test_ask_rejects_chunk_index(small_planted, cfg):
    idx = build_index([("a", "text")], Granularity.CHUNK)
    with pytest.raises(ValueError, match="document-granularity"):
        ask("q", idx, None, None, gateway(small_planted), cfg)


def test_dedup_enabled_path(small_planted, small_index, cfg):
    q = small_planted.questions[0]
    with_dedup = dataclasses.replace(cfg, dedup_enabled=True)
    b = ask(q.record.question, small_index, None, None, gateway(small_planted), with_dedup, q.record.options)
    assert b.answer.attribution == (q.record.gold_doc_id,)


def test_determinism_byte_identical(small_planted, small_index, cfg):
    q = small_planted.questions[1]
    runs = [
        ask(q.record.question, small_index, None, None, gateway(small_planted), cfg, q.record.options).to_json()
        for _ in range(2)
    ]
    assert runs[0] == runs[1]


def test_trace_roundtrip(small_planted, small_index, cfg, tmp_path):
    bundles = [
        (ask(q.record.question, small_index, None, None, gateway(small_planted), cfg, q.record.options), run, f"q{i}")
        for run in range(2)
        for i, q in enumerate(small_planted.questions[:3])
    ]
    path = tmp_path / "t.jsonl"
    write_trace(path, bundles)
    entries = read_trace(path)
    assert [(e.run, e.question_id) for e in entries] == [(r, qid) for _, r, qid in bundles]
    for e, (b, _, _) in zip(entries, bundles):
        assert e.trace.search_doc_ids == b.trace.search_doc_ids
        assert e.trace.reranked_doc_ids == b.trace.reranked_doc_ids
        assert e.trace.attributed_doc_ids == b.trace.attributed_doc_ids
        assert e.trace.total_hits == b.trace.total_hits
        assert e.answer == b.answer


def test_trace_records_stage_names():
    t = StageTrace(question="q", search_hits=(("D1", 2.0),), total_hits=1,
                   reranked=(("D1#0", "D1", 0.1),), retained_doc_ids=("D1",), attributed_doc_ids=("D1",))
    stages = [r["stage"] for r in trace_records(t, 0, "x", Answer("a", ("D1",)))]
    assert stages == ["terms", "search", "rerank", "retained", "attributed", "answer"]
    (entry,) = traces_from_records(trace_records(t, 0, "x"))
    assert entry.answer is None and entry.trace.search_hits == t.search_hits


def bundle(attributed=(), retained=()):
    answer = Answer("a", tuple(attributed)) if attributed else Answer.decline()
    return AnswerBundle(answer, (), StageTrace(retained_doc_ids=tuple(retained), attributed_doc_ids=tuple(attributed)))


def test_collect_references_modes():
    bs = [bundle(["A"], ["A", "B"]), bundle([], ["C"]), bundle(["D"], ["D"])]
    assert collect_references(bs) == {"A", "D"}
    assert collect_references(bs, "retained") == {"A", "B", "C", "D"}
    assert collect_references([]) == set()
    with pytest.raises(ValueError):
        collect_references(bs, "everything")


# -- chain of verification ---------------------------------------------------------------


def test_cove_expands_references(small_planted, small_index, cfg):
    for fx in small_planted.cove_fixtures:
        g = gateway(small_planted)
        r = cove(fx.question, small_index, None, None, g, cfg)
        assert r.reference_union >= r.draft_references
        assert len(r.questions) == len(fx.verification_questions) == len(r.verifications)
        assert r.final.startswith("Verified:")
        if fx.expects_new:
            assert r.reference_union > r.draft_references


def test_cove_ask_count(small_planted, small_index, cfg):
    fx = small_planted.cove_fixtures[0]
    calls = []
    import sparselit.pipeline as pl
    real = pl.ask

    def counting(*a, **kw):
        calls.append(a[0])
        return real(*a, **kw)

    try:
        pl.ask = counting
        r = cove(fx.question, small_index, None, None, gateway(small_planted), cfg)
    finally:
        pl.ask = real
    assert calls == [fx.question, *r.questions]


def test_cove_zero_statements_final_is_draft(small_planted, small_index, cfg):
    q = small_planted.questions[0]
    rules = [MockRule("<statements></statements>", contains=("TASK: plan-statements",))] + small_planted.rules
    g = Gateway(mock_provider(rules))
    r = cove(q.record.question, small_index, None, None, g, cfg)
    assert r.statements == () and r.verifications == ()
    assert r.final == r.draft.answer.text
    assert r.reference_union == r.draft_references


def test_cove_declined_draft_skips_plan(small_index, cfg):
    g = Gateway(mock_provider([MockRule(NO_MATCH_TERMS, contains=("TASK: search-terms",))]))
    r = cove("qqxqqzz?", small_index, None, None, g, cfg)
    assert r.draft.answer.declined and r.final == r.draft.answer.text and g.requests == 1


def test_cove_failed_verification_recorded_as_declined(small_planted, small_index, cfg):
    fx = small_planted.cove_fixtures[0]
    bad_q = fx.verification_questions[0]
    rules = [MockRule("not markup", contains=("TASK: search-terms", f"QUESTION: {bad_q}\n"))] + small_planted.rules
    r = cove(fx.question, small_index, None, None, Gateway(mock_provider(rules)), cfg)
    assert r.verifications[0].answer.declined
    assert "verification failed" in r.verifications[0].answer.text
    assert r.reference_union >= r.draft_references
