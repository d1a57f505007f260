import datetime as dt
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from sparselit.corpus import (
    CorpusError,
    Document,
    EntityDictionary,
    Section,
    annotate_entities,
    find_mentions,
    ingest_corpus,
    load_dictionary,
    normalize_surface,
    write_corpus,
    write_dictionary,
)

KIF9 = "ENSEMBL:ENSG00000088727"


def rec(doc_id, n_sections=0):
    return {
        "doc_id": doc_id,
        "title": f"Title {doc_id}",
        "abstract": "An abstract.",
        "pub_date": "2021-05-04",
        "sections": [{"section_id": f"s{i}", "heading": "H", "text": f"Text {i}."} for i in range(n_sections)],
    }


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_ingest_empty(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    assert ingest_corpus(p) == []


def test_ingest_sections(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [rec("D1", 2)])
    [doc] = ingest_corpus(p)
    assert doc.doc_id == "D1" and len(doc.sections) == 2
    assert doc.pub_date == dt.date(2021, 5, 4)


def test_duplicate_id_names_both_lines(tmp_path):
    p = tmp_path / "c.jsonl"
    records = [rec(f"D{i}") for i in range(1, 8)]
    records[6] = rec("D3")
    write_lines(p, records)
    with pytest.raises(CorpusError, match=r"lines 3 and 7"):
        ingest_corpus(p)


def test_malformed_line_named(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(rec("D1")) + "\n{not json\n")
    with pytest.raises(CorpusError, match="line 2"):
        ingest_corpus(p)


def test_missing_date_rejected(tmp_path):
    r = rec("D1")
    del r["pub_date"]
    p = tmp_path / "c.jsonl"
    write_lines(p, [r])
    with pytest.raises(CorpusError, match="line 1"):
        ingest_corpus(p)


def test_roundtrip(tmp_path):
    d = EntityDictionary([("kif9", KIF9, "gene")])
    docs = [
        annotate_entities(Document("D1", "Kif9 study", "Kif9 knocked down.", dt.date(2020, 1, 2),
                                   (Section("s1", "Intro", "KIF9 again."),)), d),
        Document("D2", "T", "A", dt.date(1999, 12, 31)),
    ]
    p = tmp_path / "c.jsonl"
    write_corpus(docs, p)
    assert ingest_corpus(p) == docs


def test_kif9_mention():
    d = EntityDictionary([("kif9", KIF9, "gene")])
    [m] = find_mentions("Kif9 knocked down", d)
    assert (m.entity_id, m.entity_type, m.char_span, m.surface) == (KIF9, "gene", (0, 4), "Kif9")


def test_no_mentions_leaves_document_unchanged():
    d = EntityDictionary([("kif9", KIF9, "gene")])
    doc = Document("D", "Nothing", "here", dt.date(2020, 1, 1))
    assert annotate_entities(doc, d) == doc


def test_longest_match_wins():
    d = EntityDictionary([("breast cancer", "MONDO:1", "disease"), ("cancer", "MONDO:2", "disease")])
    [m] = find_mentions("breast cancer", d)
    assert m.entity_id == "MONDO:1"


def test_whole_token_only():
    d = EntityDictionary([("kif9", KIF9, "gene")])
    assert find_mentions("Kif90 and xkif9", d) == []


def test_normalize_surface():
    d = EntityDictionary([("kif9", KIF9, "gene"), ("alias", "G:2", "gene"), ("alias", "D:7", "disease")])
    assert normalize_surface("KIF9", d) == [(KIF9, "gene")]
    assert normalize_surface("", d) == []
    assert normalize_surface("nope", d) == []
    assert normalize_surface("Alias", d) == [("D:7", "disease"), ("G:2", "gene")]


def test_homonym_gives_one_mention_per_type():
    d = EntityDictionary([("alias", "G:2", "gene"), ("alias", "D:7", "disease")])
    assert {m.entity_type for m in find_mentions("an alias here", d)} == {"gene", "disease"}


def test_same_type_conflict_rejected():
    d = EntityDictionary([("kif9", KIF9, "gene")])
    with pytest.raises(CorpusError):
        d.add("KIF9", "ENSEMBL:OTHER", "gene")


def test_dictionary_file_roundtrip(tmp_path):
    d = EntityDictionary([("kif9", KIF9, "gene"), ("breast cancer", "MONDO:1", "disease")])
    p = tmp_path / "d.tsv"
    write_dictionary(d, p)
    assert load_dictionary(p).entries() == d.entries()


def test_dictionary_file_errors(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("surface\tentity_id\nx\ty\n")
    with pytest.raises(CorpusError, match="missing columns"):
        load_dictionary(p)
    p.write_text("surface\tentity_id\tentity_type\nx\ty\tprotein\n")
    with pytest.raises(CorpusError, match="line 2"):
        load_dictionary(p)


def brute_force_mentions(text, dictionary):
    """All-substrings oracle: every whole-token dictionary span not strictly inside another."""
    lowered = text.lower()
    spans = set()
    for i in range(len(text)):
        for j in range(i + 1, len(text) + 1):
            if lowered[i:j] not in dictionary:
                continue
            if i > 0 and text[i - 1].isalnum():
                continue
            if j < len(text) and text[j].isalnum():
                continue
            spans.add((i, j))
    maximal = {s for s in spans if not any(o != s and o[0] <= s[0] and s[1] <= o[1] for o in spans)}
    return {(i, j, eid) for i, j in maximal for eid, _ in dictionary.lookup(lowered[i:j])}


SURFACES = ["ab", "ab cd", "cd", "cd ef", "ef", "b", "abc"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["ab", "cd", "ef", "b", "abc", "x", "ab-cd"]), max_size=12),
       st.lists(st.sampled_from(SURFACES), min_size=1, max_size=5, unique=True))
def test_find_mentions_matches_oracle(tokens, surfaces):
    d = EntityDictionary([(s, f"G:{s}", "gene") for s in surfaces])
    text = " ".join(tokens)
    got = {(m.start, m.end, m.entity_id) for m in find_mentions(text, d)}
    assert got == brute_force_mentions(text, d)


def test_annotation_properties():
    rng = random.Random(5)
    d = EntityDictionary([("kif9", KIF9, "gene"), ("cilia defect", "MONDO:9", "disease")])
    words = ["kif9", "Cilia", "defect", "the", "KIF9", "cilia"]
    for _ in range(50):
        doc = Document("D", " ".join(rng.choices(words, k=5)), " ".join(rng.choices(words, k=12)),
                       dt.date(2020, 1, 1), (Section("s", "", " ".join(rng.choices(words, k=9))),))
        once = annotate_entities(doc, d)
        assert annotate_entities(once, d) == once
        for m in once.entities:
            sliced = once.field_text(m.field)[m.start:m.end]
            assert sliced.lower() in d.surfaces_for(m.entity_id)
