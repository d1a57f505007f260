"""
Sparse retrieval in a few steps
===============================

Stemming, a must/should term set, BM25L document search, then chunk
re-ranking with reciprocal rank fusion.
"""

import datetime as dt

import numpy as np

from sparselit import Document, Section, SearchTermSet, execute_search, index_documents
from sparselit.agents import ProposedAnswer
from sparselit.rerank import rerank
from sparselit.textproc import stems
from sparselit.textproc.chunking import ChunkingConfig, chunk_document

# the stemmer folds inflections onto one index key
print(stems("Cilia were shortened; ciliary shortening was seen in embryos"))

docs = [
    Document("P1", "Kif9 and ciliary length", "Knockdown of kif9 shortens motile cilia in zebrafish embryos.",
             dt.date(2021, 3, 1),
             (Section("r", "Results", "Embryos lacking kif9 had short cilia. Beat frequency was normal. "
                                       "Wild type siblings had long cilia."),)),
    Document("P2", "Renal cilia", "Cilia in the mouse kidney sense fluid flow.", dt.date(2015, 6, 1)),
    Document("P3", "Zebrafish heart", "Heart looping in zebrafish embryos depends on flow.", dt.date(2019, 1, 1)),
]
index = index_documents(docs)
print(f"{index.N} documents, average length {index.avgdl:.1f} tokens")

# must groups are conjunctive, synonyms inside a group are alternatives
terms = SearchTermSet.build(
    must=[["zebrafish", "Danio rerio"]],
    should=[(["cilia", "ciliary"], "HIGH"), (["embryo"], "LOW")],
)
hits = execute_search(index, terms)
for h in hits:
    print(f"{h.unit_id}  {h.score:7.3f}")

# every returned score is strictly positive and sorted
scores = np.array([h.score for h in hits])
assert np.all(scores > 0) and np.all(np.diff(scores) <= 0)

# chunks keep whole sentences; the proposed answers bring synonyms the question lacks
chunks = [c for d in docs for c in chunk_document(d, ChunkingConfig(max_chunk_words=12, overlap_words=4))]
answers = [ProposedAnswer("kif9 embryos show short cilia", (("short cilia", ("truncated cilia",)),))] * 3
for r in rerank(chunks, "what ciliary phenotype follows kif9 knockdown?", answers, top_n=5):
    print(f"{r.chunk_id:6s} {r.fused_score:.5f} ranks={r.per_query_ranks}")
