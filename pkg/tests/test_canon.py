from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factgraph.amr import parse_penman
from factgraph.canon import (
    CLS,
    FORWARD,
    RESERVED_TOKENS,
    REVERSE,
    SELF,
    UNK,
    EmptyCorpus,
    SubwordVocab,
    VocabTooSmall,
    amr_to_token_graph,
    build_vocab,
    concat_token_graphs,
    detokenize,
    label_corpus,
    normalize_label,
    split_words,
    to_bipartite,
    tokenize,
)
from graphgen import random_amr

N_RES = len(RESERVED_TOKENS)


def test_reserved_ids():
    vocab = build_vocab(["abc"])
    assert vocab.tokens[:N_RES] == list(RESERVED_TOKENS)
    assert vocab.index["[CLS]"] == CLS
    assert vocab.index["[UNK]"] == UNK


def test_bpe_merges_by_hand():
    # words: ab x2, ac x1 -> merge (a, b) first, then (a, c)
    vocab = build_vocab(["ab ab ac"], max_size=100)
    assert vocab.tokens[N_RES:] == [" ", "a", "b", "c", "ab", "ac"]
    capped = build_vocab(["ab ab ac"], max_size=N_RES + 5)
    assert capped.tokens[N_RES:] == [" ", "a", "b", "c", "ab"]


def test_bpe_tie_breaks_lexicographically():
    vocab = build_vocab(["cd ab"], max_size=N_RES + 6)
    assert vocab.tokens[-1] == "ab"


def test_vocab_errors():
    with pytest.raises(EmptyCorpus):
        build_vocab([])
    with pytest.raises(VocabTooSmall):
        build_vocab(["abcdef"], max_size=6)
    lax = build_vocab(["abcdef"], max_size=6, strict=False)
    assert len(lax) == N_RES + 6


def test_tokenize_greedy_and_unknown():
    vocab = build_vocab(["ab ab ac"], max_size=100)
    ids = tokenize(vocab, "abacz")
    assert [vocab.tokens[i] for i in ids] == ["ab", "ac", "[UNK]"]
    assert detokenize(vocab, tokenize(vocab, "abac")) == "abac"


def test_vocab_save_load(tmp_path):
    vocab = build_vocab(['want-01 "quoted" boy', "naïve"], max_size=60)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    again = SubwordVocab.load(path)
    assert again.tokens == vocab.tokens
    assert again.params == vocab.params


def test_bipartite_ids_and_edges():
    g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b) :polarity -)")
    bg = to_bipartite(g)
    assert [n.id for n in bg.nodes] == ["w", "b", "g", "#0", "#1", "#2", "#3", "@3"]
    assert ("#2", "b") in bg.edges and ("g", "#2") in bg.edges
    assert {n.kind for n in bg.nodes} == {"concept", "relation", "constant"}


def test_token_graph_by_hand():
    g = parse_penman("(a / ab :x (b / c))")
    vocab = build_vocab(["ab", "c", "x"], max_size=N_RES + 4)  # characters only
    tg = amr_to_token_graph(g, vocab)
    assert tg.tokens == ("a", "b", "c", "x")
    assert tg.origin == ("a", "a", "b", "#0")
    counts = tg.edge_counts()
    # a(2 tokens) -> #0(1) -> b(1): 2 + 1 forward edges
    assert counts == {"forward": 3, "reverse": 3, "self": 4}
    fwd = {(s, d) for s, d, t in tg.edges if t == "forward"}
    assert fwd == {(0, 3), (1, 3), (3, 2)}


def test_reverse_mirrors_forward_and_self_loops():
    rng = np.random.default_rng(1)
    graphs = [random_amr(rng) for _ in range(20)]
    vocab = build_vocab(label_corpus(graphs), max_size=60)
    for g in graphs:
        tg = amr_to_token_graph(g, vocab)
        fwd = sorted(zip(tg.src[tg.etype == FORWARD], tg.dst[tg.etype == FORWARD]))
        rev = sorted(zip(tg.dst[tg.etype == REVERSE], tg.src[tg.etype == REVERSE]))
        assert fwd == rev
        assert np.array_equal(tg.src[tg.etype == SELF], tg.dst[tg.etype == SELF])
        assert sorted(tg.src[tg.etype == SELF]) == list(range(len(tg)))


def test_truncation_warns_and_respects_budget():
    g = parse_penman("(a / alpha :ARG0 (b / beta :ARG1 (c / gamma :ARG2 (d / delta))))")
    vocab = build_vocab(label_corpus([g]), max_size=N_RES + 20)
    full = amr_to_token_graph(g, vocab)
    with pytest.warns(UserWarning):
        cut = amr_to_token_graph(g, vocab, max_nodes=len(full) - 3)
    assert len(cut) <= len(full) - 3
    assert "a" in cut.origin  # root survives breadth-first truncation


def test_permuted_preserves_structure():
    g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))")
    vocab = build_vocab(label_corpus([g]), max_size=40)
    tg = amr_to_token_graph(g, vocab)
    order = np.random.default_rng(0).permutation(len(tg))
    pg = tg.permuted(order)
    original = {(tg.tokens[s], tg.tokens[d], t) for s, d, t in tg.edges}
    moved = {(pg.tokens[s], pg.tokens[d], t) for s, d, t in pg.edges}
    assert original == moved
    assert pg.edge_counts() == tg.edge_counts()


def test_concat_keeps_graphs_disjoint():
    a = parse_penman("(a / alpha)")
    b = parse_penman("(b / beta :mod (c / gamma))")
    vocab = build_vocab(label_corpus([a, b]), max_size=40)
    ta, tb = amr_to_token_graph(a, vocab), amr_to_token_graph(b, vocab)
    both = concat_token_graphs([ta, tb], ["", "doc:"])
    assert len(both) == len(ta) + len(tb)
    assert both.origin[len(ta)].startswith("doc:")
    crossing = [(s, d) for s, d, _ in both.edges if (s < len(ta)) != (d < len(ta))]
    assert crossing == []


def test_split_words_offsets():
    words = split_words("John didn't visit Paris, 2008.")
    assert [w for w, _, _ in words] == ["John", "didn't", "visit", "Paris", ",", "2008", "."]
    for w, s, e in words:
        assert "John didn't visit Paris, 2008."[s:e] == w


def test_normalize_label_keeps_sense():
    assert normalize_label("Want-01") == "want-01"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(N_RES + 30, 120))
def test_counts_property(seed, size):
    rng = np.random.default_rng(seed)
    g = random_amr(rng, max_vars=7)
    vocab = build_vocab(label_corpus([g, random_amr(rng)]), max_size=size)
    bg = to_bipartite(g)
    n_const = sum(1 for _, _, t in g.edges if not isinstance(t, str))
    assert len(bg.nodes) == len(g.instances) + n_const + len(g.edges)
    assert len(bg.edges) == 2 * len(g.edges)
    tg = amr_to_token_graph(g, vocab)
    sizes = {n.id: len(tokenize(vocab, normalize_label(n.label))) for n in bg.nodes}
    assert tg.edge_counts()["forward"] == sum(sizes[u] * sizes[v] for u, v in bg.edges)
    assert len(tg) == sum(sizes.values())
