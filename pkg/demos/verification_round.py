"""
Chain of verification
=====================

Draft an answer, split it into statements, ask each as a new question and
pool the documents every round found. Reference recall against a review's
bibliography shows what the extra rounds add.
"""

from sparselit import AskConfig, Gateway, cove, index_documents
from sparselit.evaluation import reference_recall
from sparselit.synthetic import make_planted_corpus
from sparselit.textproc.chunking import ChunkingConfig

planted = make_planted_corpus(n_docs=200, n_questions=20, n_cove=5, seed=1)
index = index_documents(planted.docs, dictionary=planted.dictionary)

for fx in planted.cove_fixtures:
    cfg = AskConfig(chunking=ChunkingConfig(60, 15), date_cutoff=fx.review.cutoff_date)
    result = cove(fx.question, index, None, None, Gateway(planted.provider()), cfg)
    rr = reference_recall(result, fx.review)
    print(fx.review.review_id, f"{len(result.questions)} verification question(s)")
    print("   draft refs ", sorted(result.draft_references))
    print("   all refs   ", sorted(result.reference_union))
    print(f"   recall {rr.initial:.0%} -> {rr.cove:.0%}")
