from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factgraph.amr import AmrGraph, parse_penman
from factgraph.smatch import (
    EmptyInput,
    TooLarge,
    corpus_smatch,
    smatch,
    smatch_amr_k,
    smatch_bruteforce,
    to_triples,
)
from graphgen import random_amr


def naive_best_match(g1: AmrGraph, g2: AmrGraph) -> int:
    """Most shared triples over every injective renaming of g1's variables."""
    t1, t2 = to_triples(g1).all(), to_triples(g2).all()
    v1, v2 = list(g1.instances), list(g2.instances)
    best = 0
    # pad the target side with fresh names so every injective partial map is covered
    targets = v2 + [f"__unmatched{i}" for i in range(len(v1))]
    for image in itertools.permutations(targets, len(v1)):
        ren = dict(zip(v1, image))
        moved = {(ren.get(a, a), r, ren.get(b, b)) for a, r, b in t1}
        best = max(best, len(moved & t2))
    return best


def test_triples_counting():
    g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / girl))")
    t = to_triples(g)
    assert len(t.instances) == 3 and len(t.relations) == 2
    assert t.attributes == (("w", "top", "want-01"),)


def test_inverse_role_normalized():
    t = to_triples(parse_penman("(b / boy :ARG0-of (w / want-01))"))
    assert ("w", "ARG0", "b") in t.relations
    a = parse_penman("(b / boy :ARG0-of (w / want-01))")
    b = parse_penman("(w / want-01 :ARG0 (b / boy))")
    # only the top triple differs
    r = smatch_bruteforce(a, b)
    assert r.matched == len(to_triples(a)) - 1


def test_hand_example():
    g1 = parse_penman("(a / want-01 :ARG0 (b / boy) :ARG1 (c / go-01 :ARG0 b))")
    g2 = parse_penman("(x / want-01 :ARG0 (y / boy) :ARG1 (z / football))")
    # 7 and 6 triples; best alignment a-x b-y c-z shares top, 2 instances, ARG0, ARG1
    for r in (smatch(g1, g2), smatch_bruteforce(g1, g2)):
        assert (r.matched, r.total1, r.total2) == (5, 7, 6)
        assert r.precision == pytest.approx(5 / 7)
        assert r.recall == pytest.approx(5 / 6)
        assert r.f1 == pytest.approx(10 / 13)
        assert r.alignment == {"a": "x", "b": "y", "c": "z"}


def test_constants_compared_by_value():
    g1 = parse_penman('(c / city :name (n / name :op1 "Paris"))')
    g2 = parse_penman('(c / city :name (n / name :op1 "Rome"))')
    r = smatch_bruteforce(g1, g2)
    assert r.matched == r.total1 - 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_identity_and_renaming(seed):
    rng = np.random.default_rng(seed)
    g = random_amr(rng, max_vars=7)
    assert smatch(g, g).f1 == 1.0
    names = {v: f"r{i}" for i, v in enumerate(rng.permutation(list(g.instances)))}
    ren = lambda x: names.get(x, x) if isinstance(x, str) else x
    h = AmrGraph(names[g.root], {names[v]: c for v, c in g.instances.items()},
                 [(names[s], r, ren(t)) for s, r, t in g.edges])
    assert smatch(g, h, restarts=4).f1 == 1.0


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bruteforce_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    g1 = random_amr(rng, max_vars=4, concepts=("a", "b", "c"))
    g2 = random_amr(rng, max_vars=4, concepts=("a", "b", "c"))
    exact = smatch_bruteforce(g1, g2)
    assert exact.matched == naive_best_match(g1, g2)
    assert smatch_bruteforce(g2, g1).matched == exact.matched
    climbed = smatch(g1, g2, restarts=8)
    assert climbed.matched <= exact.matched


def test_bruteforce_too_large():
    rng = np.random.default_rng(0)
    big = random_amr(rng, min_vars=12, max_vars=12)
    with pytest.raises(TooLarge):
        smatch_bruteforce(big, big)


def test_restarts_validated_and_deterministic():
    rng = np.random.default_rng(3)
    g1, g2 = random_amr(rng, max_vars=8), random_amr(rng, max_vars=8)
    with pytest.raises(ValueError):
        smatch(g1, g2, restarts=0)
    assert smatch(g1, g2, seed=5).alignment == smatch(g1, g2, seed=5).alignment


def test_smatch_amr_k_maxes_then_averages():
    s1 = parse_penman("(b / boy)")
    s2 = parse_penman("(g / girl)")
    docs = [parse_penman("(x / dog)"), parse_penman("(y / boy)")]
    # s1 finds itself in doc 2 (f1 1); s2 matches nothing (f1 0)
    assert smatch_amr_k([s1, s2], docs, k=2) == pytest.approx(0.5)
    assert smatch_amr_k([s1], docs, k=1) == 0.0
    assert smatch_amr_k([s1, s2], [[docs[1]], [docs[0]]], k=5) == pytest.approx(0.5)
    with pytest.raises(EmptyInput):
        smatch_amr_k([], docs)
    with pytest.raises(ValueError):
        smatch_amr_k([s1], docs, k=0)


def test_corpus_smatch_micro_average():
    a = smatch_bruteforce(parse_penman("(b / boy)"), parse_penman("(b / boy)"))
    b = smatch_bruteforce(parse_penman("(b / boy :mod (t / tall))"), parse_penman("(g / girl)"))
    p, r, f = corpus_smatch([a, b])
    # matched 2 + 0; totals 2 + 4 and 2 + 2
    assert (p, r) == pytest.approx((2 / 6, 2 / 4))
    assert f == pytest.approx(2 * p * r / (p + r))
