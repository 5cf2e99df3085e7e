from __future__ import annotations

import json
import warnings
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from factgraph.data import (
    DeduplicatedWarning,
    EmptySplit,
    SchemaViolation,
    example_to_record,
    load_dataset,
    parse_records,
    record_to_example,
    save_dataset,
    split,
)
from factgraph.synthetic import generate_corpus

RECORD = {
    "id": "a",
    "origin": "xsum",
    "document": ["Mary Jones has visited Rome ."],
    "doc_amrs": ['(v / visit-01 :ARG0 (p / person) :ARG1 (c / city))'],
    "summary_sentence": "Mary has visited Rome .",
    "summary_amr": "(v / visit-01 :ARG0 (p / person))",
}


def lines(*recs) -> list[str]:
    return [json.dumps(r) for r in recs]


def test_round_trip_through_file(tmp_path):
    recs = generate_corpus(6, seed=1)
    path = tmp_path / "d.jsonl"
    save_dataset(path, recs)
    loaded = load_dataset(path)
    # an empty span list is written as an absent field
    expected = [{k: v for k, v in r.items() if v != [] or k != "nonfactual_spans"} for r in recs]
    assert [example_to_record(ex) for ex in loaded] == expected


def test_optional_fields():
    ex = record_to_example(RECORD)
    assert ex.label is None and ex.spans == [] and ex.alignments is None
    ex = record_to_example({**RECORD, "label": "non_factual", "nonfactual_spans": [[0, 4]], "alignments": {"p": [0]}})
    assert ex.label == 1 and ex.spans == [(0, 4)] and ex.alignments == {"p": [0]}


@pytest.mark.parametrize(
    "patch",
    [
        {"origin": "cnn"},
        {"document": []},
        {"doc_amrs": []},
        {"summary_amr": "(v / visit-01"},
        {"label": "maybe"},
        {"nonfactual_spans": [[0, 999]]},
        {"nonfactual_spans": [[3, 1]]},
        {"alignments": {"zz": [0]}},
        {"alignments": {"p": [-1]}},
        {"id": ""},
    ],
)
def test_schema_violations_report_the_line(patch):
    with pytest.raises(SchemaViolation) as info:
        parse_records(lines(RECORD, {**RECORD, "id": "b", **patch}))
    assert info.value.line == 2


def test_missing_field_and_bad_json():
    rec = dict(RECORD)
    del rec["summary_amr"]
    with pytest.raises(SchemaViolation, match="summary_amr"):
        parse_records(lines(rec))
    with pytest.raises(SchemaViolation) as info:
        parse_records(["", "{not json"])
    assert info.value.line == 2


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n\n")
    with pytest.raises(SchemaViolation):
        load_dataset(path)


def test_duplicate_ids_warn_with_count():
    with pytest.warns(DeduplicatedWarning, match="dropped 2"):
        out = parse_records(lines(RECORD, RECORD, {**RECORD, "id": "b"}, RECORD))
    assert [ex.id for ex in out] == ["a", "b"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        parse_records(lines(RECORD))


def test_split_sizes_and_strata():
    examples = parse_records(json.dumps(r) for r in generate_corpus(100, seed=2))
    train, dev, test = split(examples, (0.8, 0.1, 0.1), seed=0)
    assert (len(train), len(dev), len(test)) == (80, 10, 10)
    assert Counter(ex.label for ex in dev) == {0: 5, 1: 5}
    assert split(examples, seed=0) == (train, dev, test)
    assert {ex.id for ex in train + dev + test} == {ex.id for ex in examples}
    with pytest.raises(EmptySplit):
        split([])
    with pytest.raises(ValueError):
        split(examples, (0.5, 0.6))


class _R:
    def __init__(self, label):
        self.label = label


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_split_is_a_stratified_partition(n0, n1, seed):
    recs = [_R(0) for _ in range(n0)] + [_R(1) for _ in range(n1)]
    parts = split(recs, (0.8, 0.1, 0.1), seed=seed)
    assert sorted(map(id, sum(parts, []))) == sorted(map(id, recs))
    n = n0 + n1
    for part, frac in zip(parts, (0.8, 0.1, 0.1)):
        assert abs(len(part) - frac * n) < 1
        # evenly spaced interleaving keeps each slice within one record of the label ratio
        ones = sum(r.label for r in part)
        assert abs(ones - len(part) * n1 / n) <= 2
