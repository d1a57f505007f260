"""Command-line front end: index, search, ask, cove and eval."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from .agents import AgentOutputError, Answer, parse_search_terms, search_terms_agent, ner_agent
from .config import load_settings
from .corpus import ingest_corpus, load_dictionary
from .index import count_matches, execute_search, index_documents, load_index, save_index
from .llm import Gateway, LLMError, provider_from_config
from .pipeline import AnswerBundle, StageTrace, ask, cove, read_trace, write_trace

log = logging.getLogger("sparselit")


def _gateway(args, settings) -> Gateway:
    provider = provider_from_config(settings.provider, getattr(args, "mock_script", None))
    return Gateway(provider, settings.provider)


def cmd_index_build(args) -> int:
    docs = ingest_corpus(args.corpus)
    dictionary = load_dictionary(args.dict) if args.dict else None
    index = index_documents(docs, dictionary=dictionary)
    save_index(index, args.out)
    print(f"indexed {index.N} documents (avgdl {index.avgdl:.1f}) -> {args.out}")
    return 0


def cmd_search(args) -> int:
    settings = load_settings(args.config)
    index = load_index(args.index)
    if args.terms:
        text = sys.stdin.read() if args.terms == "-" else Path(args.terms).read_text(encoding="utf-8")
        terms = parse_search_terms(text)
    else:
        gateway = _gateway(args, settings)
        mentions = ner_agent(args.question, index.dictionary) if index.dictionary else []
        terms = search_terms_agent(args.question, mentions, gateway)
    cfg = settings.ask
    top_k = args.top_k or cfg.top_docs
    hits = execute_search(index, terms, cfg.recency, cfg.date_cutoff, top_k, cfg.bm25l, cfg.boosts)
    total = count_matches(index, terms, cfg.date_cutoff)
    print(f"# {len(hits)} of {total} matching documents")
    for rank, h in enumerate(hits, start=1):
        print(f"{rank}\t{h.unit_id}\t{h.score:.6f}")
    return 0


def _print_answer(answer: Answer) -> None:
    if answer.declined:
        print(f"DECLINED: {answer.text}")
        return
    print(f"ANSWER: {answer.text}")
    if answer.choice is not None:
        print(f"CHOICE: {answer.choice}")
    print(f"ATTRIBUTION: {', '.join(answer.attribution)}")


def cmd_ask(args) -> int:
    settings = load_settings(args.config)
    index = load_index(args.index)
    gateway = _gateway(args, settings)
    bundle = ask(args.question, index, None, None, gateway, settings.ask, args.option or None)
    _print_answer(bundle.answer)
    write_trace(args.trace, [(bundle, None, None)])
    print(f"trace -> {args.trace}")
    return 0


def cmd_cove(args) -> int:
    settings = load_settings(args.config)
    index = load_index(args.index)
    gateway = _gateway(args, settings)
    cfg = settings.ask
    n = args.statements or settings.eval.cove_statements
    result = cove(args.question, index, None, None, gateway, cfg, n, args.reference_mode or settings.eval.reference_mode)
    Path(args.out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"FINAL: {result.final}")
    print(f"DRAFT REFERENCES: {', '.join(sorted(result.draft_references)) or '-'}")
    print(f"REFERENCE UNION: {', '.join(sorted(result.reference_union)) or '-'}")
    print(f"result -> {args.out}")
    return 0


def _run_questions(records, index, gateway, cfg, repeats):
    """Answer every record ``repeats`` times; failures degrade to declined answers."""
    bundles, failures = [], 0
    for run in range(repeats):
        for rec in records:
            try:
                b = ask(rec.question, index, None, None, gateway, cfg, rec.options)
            except (AgentOutputError, LLMError) as exc:
                log.warning("question %s failed: %s", rec.question_id or rec.question[:60], exc)
                failures += 1
                b = AnswerBundle(Answer.decline(f"failed: {exc}"), (), StageTrace(question=rec.question))
            bundles.append((b, run, rec.question_id))
    return bundles, failures


def cmd_eval_qa(args) -> int:
    settings = load_settings(args.config)
    records = ev.load_benchmark_records(args.records)
    if not records:
        raise ValueError(f"{args.records}: no benchmark records")
    repeats = args.repeats or settings.eval.repeats
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = load_index(args.index) if args.index else None
    failures = 0
    if args.traces:
        entries = read_trace(args.traces)
        traces = [e.trace for e in entries]
        answers = [e.answer for e in entries]
    else:
        if index is None:
            raise ValueError("eval qa needs --index or --traces")
        bundles, failures = _run_questions(records, index, _gateway(args, settings), settings.ask, repeats)
        write_trace(out / "traces.jsonl", bundles)
        traces = [b.trace for b, _, _ in bundles]
        answers = [b.answer for b, _, _ in bundles]
    if len(traces) != len(records) * repeats:
        raise ValueError(f"expected {len(records) * repeats} traces for {repeats} repeat(s), found {len(traces)}")
    gold = [r.gold_doc_id for r in records]
    cdf = ev.source_rank_cdf(traces, gold, settings.eval.max_rank, repeats)
    ev.write_cdf_csv(cdf, out / "cdf_source.csv")
    available = set(index.unit_ids) if index is not None else None
    recall = ev.stage_recall(traces, gold, repeats, available)
    ev.write_stage_recall_csv(recall, out / "stage_recall.csv")
    if any(a is None for a in answers):
        raise ValueError("trace file has no answer records; QA metrics need them")
    results = [(not a.declined, ev.is_correct(a, r)) for a, r in zip(answers, records * repeats)]
    metrics = ev.qa_metrics(results)
    ev.write_metrics_csv(metrics, out / "metrics.csv")
    summary = {"repeats": repeats, "questions": len(records), "failed_questions": failures,
               "metrics": metrics, "stage_recall": recall, "total_hits": ev.total_hits_summary(traces)}
    if index is not None and index.documents and all(r.key_passage for r in records):
        gold_chunks = [
            ev.gold_chunk_ids(index.documents[g], r.key_passage, settings.ask.chunking)
            if g in index.documents else []
            for r, g in zip(records, gold)
        ]
        ev.write_cdf_csv(
            ev.chunk_rank_cdf(traces, gold_chunks, settings.eval.chunk_max_rank, repeats),
            out / "cdf_rerank.csv",
        )
    ev.write_summary(out / "summary.json", summary)
    prec = "n/a" if metrics.precision is None else f"{metrics.precision:.3f}"
    print(f"accuracy {metrics.accuracy:.3f}  coverage {metrics.coverage:.3f}  precision {prec}")
    for row in recall:
        print(f"{row.stage:<11}recall {row.recall:.3f} [{row.low:.3f}, {row.high:.3f}]")
    print(f"tables -> {out}")
    return 0


def cmd_eval_review(args) -> int:
    settings = load_settings(args.config)
    reviews = ev.load_review_records(args.records)
    index = load_index(args.index)
    gateway = _gateway(args, settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, results = [], []
    mode = args.reference_mode or settings.eval.reference_mode
    for rv in reviews:
        cfg = dataclasses.replace(settings.ask, date_cutoff=rv.cutoff_date or settings.ask.date_cutoff)
        res = cove(rv.derived_question, index, None, None, gateway, cfg, settings.eval.cove_statements, mode)
        results.append({"review_id": rv.review_id, **res.to_dict()})
        rows.append(ev.reference_recall(res, rv))
    ev.write_reference_recall_csv(rows, out / "reference_recall.csv")
    with open(out / "cove_results.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    for r in rows:
        fmt = lambda v: "-" if v is None else f"{100 * v:.1f}%"
        print(f"{r.review_id}\tinitial {fmt(r.initial)}\tcove {fmt(r.cove)}")
    print(f"table -> {out / 'reference_recall.csv'}")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_planted

    paths = write_planted(args.out, n_docs=args.docs, n_questions=args.questions, seed=args.seed)
    for k, p in paths.items():
        print(f"{k}\t{p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparselit", description="Sparse-retrieval literature QA.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    idx = sub.add_parser("index", help="index management").add_subparsers(dest="action", required=True)
    b = idx.add_parser("build", help="build and persist a document index")
    b.add_argument("--corpus", required=True)
    b.add_argument("--dict", help="entity dictionary (tab-separated)")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_index_build)

    def llm_args(sp):
        sp.add_argument("--index", required=True)
        sp.add_argument("--mock-script", help="scripted offline provider (JSON lines)")
        sp.add_argument("--config", help="JSON settings document")

    s = sub.add_parser("search", help="print ranked hits for a term set or a question")
    llm_args(s)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--terms", help="term-set markup file, or - for stdin")
    g.add_argument("--question")
    s.add_argument("--top-k", type=int)
    s.set_defaults(func=cmd_search)

    a = sub.add_parser("ask", help="answer one question")
    llm_args(a)
    a.add_argument("--question", required=True)
    a.add_argument("--option", action="append", help="multiple-choice option (repeatable)")
    a.add_argument("--trace", default="trace.jsonl")
    a.set_defaults(func=cmd_ask)

    c = sub.add_parser("cove", help="chain-of-verification run")
    llm_args(c)
    c.add_argument("--question", required=True)
    c.add_argument("--statements", type=int)
    c.add_argument("--reference-mode", choices=["attributed", "retained"])
    c.add_argument("--out", default="cove.json")
    c.set_defaults(func=cmd_cove)

    e = sub.add_parser("eval", help="benchmark harness").add_subparsers(dest="action", required=True)
    q = e.add_parser("qa", help="rank CDFs, stage recall and QA metrics")
    q.add_argument("--records", required=True)
    q.add_argument("--repeats", type=int)
    q.add_argument("--index")
    q.add_argument("--traces", help="evaluate exported traces instead of running")
    q.add_argument("--mock-script")
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_eval_qa)
    r = e.add_parser("review", help="reference recall of CoVe against review bibliographies")
    llm_args(r)
    r.add_argument("--records", required=True)
    r.add_argument("--reference-mode", choices=["attributed", "retained"])
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_eval_review)

    syn = sub.add_parser("synth", help="write a planted synthetic fixture")
    syn.add_argument("--out", required=True)
    syn.add_argument("--docs", type=int, default=500)
    syn.add_argument("--questions", type=int, default=50)
    syn.add_argument("--seed", type=int, default=7)
    syn.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"sparselit: error: {msg}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
