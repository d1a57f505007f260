import string

import pytest
from hypothesis import given, settings, strategies as st

from conftest import DATA
from sparselit.agents import (
    AgentOutputError,
    Answer,
    AttributionError,
    ChunkSummary,
    Verdict,
    answer_agent,
    dedup_agent,
    inject_identifiers,
    ner_agent,
    parse_proposed_answer,
    parse_proposed_answers,
    parse_search_terms,
    proposed_answers_agent,
    search_terms_agent,
    serialize_search_terms,
    summarize_all,
)
from sparselit.corpus import EntityDictionary
from sparselit.index import Boost, SearchTermSet, ShouldGroup
from sparselit.llm import Gateway, MockRule, mock_provider
from sparselit.textproc.chunking import Chunk

KIF9 = "ENSEMBL:ENSG00000088727"
QUESTION = "Relative to wild type zebrafish embryos, those with Kif9 knocked down display what ciliary phenotype?"


def listing():
    return (DATA / "kif9_terms.xml").read_text(encoding="utf-8").rstrip("\n")


def gw(rules):
    return Gateway(mock_provider(rules))


# -- term-set markup -------------------------------------------------------------


def test_listing_parses_to_expected_groups():
    terms = parse_search_terms(listing())
    assert terms.must_groups == (("zebrafish", "Danio rerio"), ("cilia", "ciliary"), (KIF9,))
    assert [g.boost for g in terms.should_groups] == [Boost.MEDIUM, Boost.HIGH, Boost.LOW, Boost.MEDIUM]
    assert terms.should_groups[1].terms == ("knockdown", "knocked down", "silencing", "gene silencing")


def test_listing_serializes_back_exactly():
    assert serialize_search_terms(parse_search_terms(listing())) == listing()


def test_surrounding_reasoning_is_ignored():
    reply = "Let me think. <terms><must><term>x</term></must></terms> done\n" + listing()
    assert len(parse_search_terms(reply).must_groups) == 3


def test_missing_boost_names_group():
    bad = "<terms><should><term>a</term><boost>LOW</boost></should><should><term>b</term></should></terms>"
    with pytest.raises(AgentOutputError, match="should group 2"):
        parse_search_terms(bad)


@pytest.mark.parametrize(
    "markup, msg",
    [
        ("<terms><should><term>a</term><boost>EXTREME</boost></should></terms>", "EXTREME"),
        ("<terms><must></must></terms>", "empty"),
        ("<terms><must><term> </term></must></terms>", "empty <term>"),
        ("<terms><maybe/></terms>", "maybe"),
        ("<terms><must><term>a</term><boost>LOW</boost></must></terms>", "boost"),
        ("<terms><must><term>a</term></terms>", "malformed"),
        ("no markup at all", "no <terms>"),
    ],
)
def test_malformed_markup(markup, msg):
    with pytest.raises(AgentOutputError, match=msg):
        parse_search_terms(markup)


def test_empty_terms_is_legal():
    assert parse_search_terms("<terms></terms>") == SearchTermSet()
    assert parse_search_terms("<terms/>") == SearchTermSet()


WORD = st.text(alphabet=string.ascii_letters + string.digits + " -&<>'\"", min_size=1, max_size=12).map(str.strip).filter(bool)
GROUP = st.lists(WORD, min_size=1, max_size=4).map(tuple)
TERMSETS = st.builds(
    SearchTermSet,
    st.lists(GROUP, max_size=4).map(tuple),
    st.lists(st.builds(ShouldGroup, GROUP, st.sampled_from(list(Boost))), max_size=4).map(tuple),
)


@settings(max_examples=200, deadline=None)
@given(TERMSETS)
def test_roundtrip(terms):
    text = serialize_search_terms(terms)
    assert parse_search_terms(text) == terms
    assert serialize_search_terms(parse_search_terms(text)) == text


# -- NER and search-terms agent -----------------------------------------------------


def kif9_dict():
    return EntityDictionary([("Kif9", KIF9, "gene"), ("KIF3A", "ENSEMBL:ENSG00000131437", "gene")])


def test_ner_finds_kif9():
    mentions = ner_agent(QUESTION, kif9_dict())
    assert [(m.surface, m.entity_id, m.entity_type) for m in mentions] == [("Kif9", KIF9, "gene")]


def test_ner_two_genes_in_order():
    mentions = ner_agent("Does KIF3A bind kif9?", kif9_dict())
    assert [m.entity_id for m in mentions] == ["ENSEMBL:ENSG00000131437", KIF9]


def test_search_terms_agent_injects_identifier():
    reply = "<terms><must><term>cilia</term></must><should><term>embryo</term><boost>LOW</boost></should></terms>"
    g = gw([MockRule(reply, contains=("TASK: search-terms", KIF9))])
    terms = search_terms_agent(QUESTION, ner_agent(QUESTION, kif9_dict()), g)
    assert terms.must_groups == (("cilia",), (KIF9,))


def test_inject_does_not_duplicate():
    terms = parse_search_terms(listing())
    assert inject_identifiers(terms, ner_agent(QUESTION, kif9_dict())) == terms


def test_search_terms_retry_then_success_and_failure():
    g = gw([MockRule(listing(), contains=("could not be used",)), MockRule("garbage", contains=("TASK",))])
    assert len(search_terms_agent("q", [], g).must_groups) == 3
    assert g.requests == 2
    g = gw([MockRule("garbage", contains=("TASK",))])
    with pytest.raises(AgentOutputError, match="after one retry"):
        search_terms_agent("q", [], g)
    assert g.requests == 2


# -- proposed answers ----------------------------------------------------------------


def answers_fixture():
    return (DATA / "kif9_answers.txt").read_text(encoding="utf-8").splitlines()


def test_proposed_answer_parsing_both_bracket_styles():
    first, second, third = (parse_proposed_answer(a) for a in answers_fixture())
    assert [k for k, _ in first.synonym_expansions] == [
        "grow stunted cilia", "kinesin motor", "deliver axoneme cargo", "assembly stops early"]
    assert first.synonym_expansions[0][1] == ("short cilia", "truncated cilia", "reduced cilia length")
    # the square-bracket list
    assert first.synonym_expansions[2][1] == ("IFT cargo", "ciliary building blocks")
    assert first.text == ("Embryos lacking Kif9 probably grow stunted cilia because the kinesin motor "
                          "helps deliver axoneme cargo, so assembly stops early.")
    # the key term stops at a stopword ("a brake" -> "brake")
    assert second.synonym_expansions[1] == ("brake", ("inhibitor", "damping factor"))
    assert "thicker cilia" in third.query_text() and third.query_text().startswith(third.text)


def test_proposed_answers_agent():
    body = "<answers>" + "".join(f"<answer>{a}</answer>" for a in answers_fixture()) + "</answers>"
    out = proposed_answers_agent(QUESTION, gw([MockRule(body, contains=("TASK: proposed-answers",))]))
    assert len(out) == 3
    with pytest.raises(AgentOutputError, match="got 2"):
        parse_proposed_answers("<answers><answer>a</answer><answer>b</answer></answers>")


# -- summarization and dedup ------------------------------------------------------------


def chunks(n, doc="D"):
    return [Chunk(f"{doc}#c{i}", doc, ("s",), f"text number {i}", 3) for i in range(n)]


def test_summarize_all_keeps_order_and_verdicts():
    rules = [
        MockRule("<summary><verdict>retained</verdict><facts>fact $n</facts></summary>",
                 regex=r'chunk_id="D#c(?P<n>\d*[02468])"'),
        MockRule("reasoning... <summary><verdict>rejected</verdict></summary>", contains=("TASK: summarize",)),
    ]
    g = Gateway(mock_provider(rules))
    out = summarize_all("q", chunks(30), g)
    assert [s.chunk_id for s in out] == [f"D#c{i}" for i in range(30)]
    assert [s.retained for s in out] == [i % 2 == 0 for i in range(30)]
    assert out[4].facts == "fact 4" and out[5].facts == ""


def test_summary_without_facts_is_error():
    g = gw([MockRule("<summary><verdict>retained</verdict></summary>", contains=("TASK",))])
    with pytest.raises(AgentOutputError, match="facts"):
        summarize_all("q", chunks(1), g)


def summaries(n, facts=None):
    return [ChunkSummary(f"c{i}", f"D{i}", (facts or "fact {i}").format(i=i), Verdict.RETAINED) for i in range(n)]


def test_dedup_windows():
    calls = []

    class Spy:
        provider_id = "spy"

        def send(self, prompt, timeout):
            from sparselit.llm import Completion, Usage
            ids = [p.split('"')[0] for p in prompt.user.split('chunk_id="')[1:]]
            calls.append(ids)
            return Completion("<dedup>" + "".join(f"<keep>{i}</keep>" for i in ids) + "</dedup>", Usage(0, 0), "spy")

    out = dedup_agent("q", summaries(7), Gateway(Spy()), set_size=3)
    assert [s.chunk_id for s in out] == [f"c{i}" for i in range(7)]
    assert [len(c) for c in calls] == [3, 3]  # the lone seventh passes through without a call


def test_dedup_drops_identical():
    g = gw([MockRule("<dedup><keep>c0</keep></dedup>", contains=("TASK: deduplicate",))])
    out = dedup_agent("q", summaries(3, "same fact"), g, set_size=3)
    assert [s.chunk_id for s in out] == ["c0"]


def test_dedup_unknown_id():
    g = gw([MockRule("<dedup><keep>zzz</keep></dedup>", contains=("TASK",))])
    with pytest.raises(AgentOutputError, match="unknown"):
        dedup_agent("q", summaries(2), g)


# -- answering -------------------------------------------------------------------------


def test_answer_with_citations_and_choice():
    g = gw([MockRule("<answer><text>short cilia</text><cite>D1</cite><cite>D1</cite><choice>B</choice></answer>", contains=("TASK",))])
    a = answer_agent("q", summaries(3), g, ["long", "short"])
    assert a == Answer("short cilia", ("D1",), False, "short")


def test_answer_outside_attribution_is_rejected():
    g = gw([MockRule("<answer><text>x</text><cite>D99</cite></answer>", contains=("TASK",))])
    with pytest.raises(AttributionError):
        answer_agent("q", summaries(3), g)
    assert g.requests == 1


def test_answer_without_summaries_declines_without_call():
    g = gw([])
    a = answer_agent("q", [ChunkSummary("c", "D", "", Verdict.REJECTED)], g)
    assert a.declined and a.attribution == () and g.requests == 0


def test_answer_declined_reply():
    g = gw([MockRule("<answer><declined>not enough</declined></answer>", contains=("TASK",))])
    a = answer_agent("q", summaries(1), g)
    assert a.declined and a.text == "not enough"


def test_answer_retry_once_then_error():
    g = gw([MockRule("<answer><text>x</text></answer>", contains=("TASK",))])
    with pytest.raises(AgentOutputError, match="after one retry"):
        answer_agent("q", summaries(1), g)
    assert g.requests == 2


def test_answer_invariants():
    with pytest.raises(ValueError):
        Answer("x", (), False)
    with pytest.raises(ValueError):
        Answer("x", ("D",), True)
