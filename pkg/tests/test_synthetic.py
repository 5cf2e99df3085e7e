from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factgraph.amr import parse_penman, serialize_penman
from factgraph.canon import split_words
from factgraph.synthetic import (
    NUMBER_WORDS,
    RULES,
    RuleNotApplicable,
    Unreadable,
    applicable_rules,
    capitalized_spans,
    generate_corpus,
    generate_document,
    generate_example,
    read_sentence,
    synth_corrupt,
)

MISSING = "John Smith has been missing for six years ."


def test_number_swap_changes_the_number():
    c = synth_corrupt([MISSING], MISSING, "number_swap", seed=0)
    new = c.sentence[c.span[0] : c.span[1]]
    assert new in NUMBER_WORDS and new != "six"
    assert c.sentence.replace(new, "six") == MISSING
    assert c.label == "NonFactual" and c.rule == "number_swap"


def test_negation_toggle_both_ways():
    c = synth_corrupt([MISSING], MISSING, "negation_toggle", seed=0)
    assert c.sentence == "John Smith has not been missing for six years ."
    assert c.sentence[c.span[0] : c.span[1]] == "not"
    back = synth_corrupt([MISSING], c.sentence, "negation_toggle", seed=0)
    assert back.sentence == MISSING
    # the span marks the auxiliary that lost its negator
    assert back.sentence[back.span[0] : back.span[1]] == "has"


def test_pronoun_swap_keeps_case():
    c = synth_corrupt(["x"], "He was born in 1990 .", "pronoun_swap", seed=0)
    assert c.sentence == "She was born in 1990 ." and c.span == (0, 3)


def test_entity_swap_draws_from_the_document():
    doc = ["Mary Jones has visited Rome .", "John Smith has visited Paris ."]
    for seed in range(20):
        c = synth_corrupt(doc, doc[1], "entity_swap", seed)
        assert c.sentence in ("Mary Jones has visited Paris .", "John Smith has visited Rome .")
        assert c.sentence[c.span[0] : c.span[1]] in ("Mary Jones", "Rome")


def test_rule_errors():
    with pytest.raises(RuleNotApplicable):
        synth_corrupt(["x"], "John Smith has visited Paris .", "pronoun_swap", seed=0)
    with pytest.raises(RuleNotApplicable):
        # no other entity in the document
        synth_corrupt(["John Smith has visited Paris ."], "John Smith has visited Paris .", "entity_swap", 0)
    with pytest.raises(ValueError):
        synth_corrupt(["x"], MISSING, "synonym", seed=0)
    with pytest.raises(Unreadable):
        read_sentence("colorless green ideas sleep furiously .")


def test_capitalized_spans_skip_pronouns():
    assert capitalized_spans("He met Mary Jones in Paris .") == [(2, 4), (5, 6)]


def test_read_sentence_example():
    g, align = read_sentence("John Smith has not visited Paris .")
    assert serialize_penman(g, indent=None) == (
        '(v / visit-01 :ARG0 (p / person :name (n / name :op1 "John" :op2 "Smith")) '
        ':ARG1 (c / city :name (n2 / name :op1 "Paris")) :polarity -)'
    )
    words = [w for w, _, _ in split_words("John Smith has not visited Paris .")]
    # predicates align to their auxiliary as well, so a toggled negator lands on an incident edge
    assert [words[i] for i in align["v"]] == ["has", "visited"]
    assert [words[i] for i in align["@7"]] == ["not"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(RULES), st.integers(0, 2**31 - 1))
def test_corruption_is_deterministic_and_readable(doc_seed, rule, seed):
    doc = generate_document(np.random.default_rng(doc_seed))
    source = doc[0]
    if rule not in applicable_rules(doc, source):
        with pytest.raises(RuleNotApplicable):
            synth_corrupt(doc, source, rule, seed)
        return
    try:
        a = synth_corrupt(doc, source, rule, seed)
    except RuleNotApplicable:
        return
    assert a == synth_corrupt(doc, source, rule, seed)
    assert a.sentence != source
    start, end = a.span
    assert 0 <= start < end <= len(a.sentence)
    # the graph is read back from the corrupted words
    g, align = read_sentence(a.sentence)
    n_words = len(split_words(a.sentence))
    assert all(0 <= i < n_words for idx in align.values() for i in idx)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_generated_records_are_consistent(seed, corrupt):
    rec = generate_example(np.random.default_rng(seed), 0, corrupt)
    assert len(rec["doc_amrs"]) == len(rec["document"])
    for s, amr in zip(rec["document"], rec["doc_amrs"]):
        assert serialize_penman(read_sentence(s)[0], indent=None) == amr
    g = parse_penman(rec["summary_amr"])
    assert set(rec["alignments"]) <= set(g.node_ids())
    if corrupt:
        assert rec["label"] == "non_factual" and rec["summary_sentence"] not in rec["document"]
        assert len(rec["nonfactual_spans"]) == 1
    else:
        assert rec["label"] == "factual" and rec["summary_sentence"] in rec["document"]
        assert rec["nonfactual_spans"] == []


def test_corpus_balance_and_determinism():
    recs = generate_corpus(301, seed=5)
    counts = Counter(r["label"] for r in recs)
    assert counts == {"non_factual": 150, "factual": 151}
    assert recs == generate_corpus(301, seed=5)
    assert len({r["id"] for r in recs}) == 301
    assert set(r["rule"] for r in recs if r["rule"]) == set(RULES)
