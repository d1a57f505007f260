"""
Planted benchmark
=================

A synthetic corpus with one gold article per question, answered end to end
through scripted agents. The harness then reports the gold-article rank CDF,
recall at each pipeline stage and the QA metrics.
"""

import time

import numpy as np

from sparselit import AskConfig, Gateway, ask, index_documents
from sparselit import evaluation as ev
from sparselit.synthetic import make_planted_corpus
from sparselit.textproc.chunking import ChunkingConfig

t0 = time.perf_counter()
planted = make_planted_corpus(n_docs=500, n_questions=50, seed=7)
index = index_documents(planted.docs, dictionary=planted.dictionary)
cfg = AskConfig(chunking=ChunkingConfig(max_chunk_words=60, overlap_words=15))

bundles = [
    ask(q.record.question, index, None, None, Gateway(planted.provider()), cfg, q.record.options)
    for q in planted.questions
]
print(f"answered {len(bundles)} questions in {time.perf_counter() - t0:.1f} s")

traces = [b.trace for b in bundles]
gold = [q.record.gold_doc_id for q in planted.questions]

cdf = ev.source_rank_cdf(traces, gold, max_rank=200)
curve = np.array([r.mean for r in cdf])
for k in (1, 3, 10, 200):
    print(f"P(gold rank <= {k:3d}) = {curve[k - 1]:.2f}")

for row in ev.stage_recall(traces, gold):
    print(f"{row.stage:<11s} recall {row.recall:.2f}")

m = ev.qa_metrics((not b.answer.declined, ev.is_correct(b.answer, q.record)) for b, q in zip(bundles, planted.questions))
print(f"accuracy {m.accuracy:.2f}  coverage {m.coverage:.2f}  precision {m.precision:.2f}")
