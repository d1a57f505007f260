from pathlib import Path

import pytest

from sparselit.index import index_documents
from sparselit.pipeline import AskConfig
from sparselit.synthetic import make_planted_corpus
from sparselit.textproc.chunking import ChunkingConfig

DATA = Path(__file__).parent / "data"

# small chunks so that re-ranking has real work to do on the planted corpus
PLANTED_CHUNKING = ChunkingConfig(max_chunk_words=60, overlap_words=15)


@pytest.fixture(scope="session")
def planted():
    return make_planted_corpus()


@pytest.fixture(scope="session")
def planted_index(planted):
    return index_documents(planted.docs, dictionary=planted.dictionary)


@pytest.fixture(scope="session")
def planted_cfg():
    return AskConfig(chunking=PLANTED_CHUNKING)


@pytest.fixture(scope="session")
def small_planted():
    return make_planted_corpus(n_docs=60, n_questions=8, hard_distractors=2, n_cove=4, seed=3)


@pytest.fixture(scope="session")
def small_index(small_planted):
    return index_documents(small_planted.docs, dictionary=small_planted.dictionary)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, mod.N_CRITERIA + 1):
        terminalreporter.write_line(mod.RESULTS.get(n, f"FAIL criterion {n}: did not run to completion"))
