from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factgraph import autodiff as ad
from factgraph.amr import parse_penman
from factgraph.canon import split_words
from factgraph.data import FACTUAL, NONFACTUAL, record_to_example
from factgraph.models import (
    EmptyDocument,
    EmptyInput,
    FactGraph,
    FactGraphE,
    Featurizer,
    MissingAlignments,
    NoEdges,
    SpanOutOfBounds,
    TfidfEmbedder,
    aggregate_edges,
    align_lexical,
    edge_label_from_spans,
    edge_scores,
    select_doc_graphs,
    sentence_score,
    summary_score,
)
from factgraph.synthetic import generate_corpus
from minimodel import config_for, corpus

# -- selection ---------------------------------------------------------------


def dense_cosines(doc: list[str], summary: str) -> list[float]:
    """Dense tf-idf vectors with smoothed idf fitted on ``doc``, then plain cosine."""
    toks = [[w.lower() for w, _, _ in split_words(s) if w[0].isalnum()] for s in doc]
    vocab = sorted({t for ts in toks for t in ts} | {w.lower() for w, _, _ in split_words(summary)})
    n = len(doc)
    idf = np.array([math.log((1 + n) / (1 + sum(t in ts for ts in toks))) + 1 for t in vocab])

    def vec(s):
        v = np.zeros(len(vocab))
        for w, _, _ in split_words(s):
            if w[0].isalnum():
                v[vocab.index(w.lower())] += 1
        return v * idf

    q = vec(summary)
    return [float(vec(s) @ q / (np.linalg.norm(vec(s)) * np.linalg.norm(q))) for s in doc]


def test_selection_small_document():
    doc = ["Mary has visited Rome .", "John was happy .", "Paul has joined Nokia ."]
    assert select_doc_graphs(doc, "Peter was tired .", k=5) == [1, 0, 2]
    assert select_doc_graphs(doc, doc[2], k=1) == [2]
    with pytest.raises(EmptyDocument):
        select_doc_graphs([], "x", k=1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_selection_matches_dense_cosine(seed):
    rng = np.random.default_rng(seed)
    words = ["john", "mary", "visited", "rome", "paris", "has", "was", "born", "happy", "nokia"]
    doc = [" ".join(rng.choice(words, size=rng.integers(2, 7))) + " ." for _ in range(rng.integers(1, 9))]
    summary = " ".join(rng.choice(words, size=4)) + " ."
    sims = dense_cosines(doc, summary)
    got = select_doc_graphs(doc, summary, k=5)
    ref = sorted(range(len(doc)), key=lambda i: (-round(sims[i], 12), i))[:5]
    assert got == ref


def test_selection_stable_under_unrelated_appends():
    doc = ["Mary has visited Rome .", "John has visited Paris .", "Paul was happy ."]
    emb = TfidfEmbedder.fit(doc)
    base = select_doc_graphs(doc, "Mary has visited Paris .", k=2, embedder=emb)
    longer = doc + ["Karen bought seven horses .", "Nokia hired workers ."]
    assert select_doc_graphs(longer, "Mary has visited Paris .", k=2, embedder=emb) == base


# -- edge labels and aggregation --------------------------------------------

GRAPH = parse_penman("(v / visit-01 :ARG0 (p / person) :ARG1 (c / city) :time (d / date))")
SENTENCE = "Someone visited a city then"


def test_edge_labels_crafted():
    # word 3 "city" is flagged; node c is incident to one edge, node v to all three
    align = {"v": [1], "p": [0], "c": [3]}
    assert edge_label_from_spans(GRAPH, align, [], SENTENCE) == [0, 0, 0]
    assert edge_label_from_spans(GRAPH, align, [(18, 22)], SENTENCE) == [0, 1, 0]
    assert edge_label_from_spans(GRAPH, align, [(8, 12)], SENTENCE) == [1, 1, 1]
    # unaligned nodes never trigger
    assert edge_label_from_spans(GRAPH, {"v": [1]}, [(23, 27)], SENTENCE) == [0, 0, 0]
    with pytest.raises(SpanOutOfBounds):
        edge_label_from_spans(GRAPH, align, [(0, 99)], SENTENCE)


def test_edge_labels_agree_with_sentence_labels():
    # every corruption rule touches a word aligned to some edge endpoint
    for rec in generate_corpus(200, seed=3):
        ex = record_to_example(rec)
        labels = edge_label_from_spans(ex.summary_graph, ex.alignments, ex.spans, ex.summary)
        assert (NONFACTUAL in labels) == (ex.label == NONFACTUAL), rec["rule"]


def test_aggregate_and_summary_score():
    assert aggregate_edges([0] * 10) == FACTUAL
    assert aggregate_edges([0] * 9 + [1]) == NONFACTUAL
    with pytest.raises(NoEdges):
        aggregate_edges([])
    assert summary_score([0, 0, 0]) == 1.0
    assert summary_score([0, 1]) == 0.5
    assert abs(summary_score([0, 0, 1]) - 2 / 3) <= 1e-12
    with pytest.raises(EmptyInput):
        summary_score([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=20), st.randoms())
def test_summary_score_permutation_invariant(labels, rnd):
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    assert summary_score(shuffled) == summary_score(labels)


def test_align_lexical():
    g = parse_penman('(v / visit-01 :ARG0 (p / person :name (n / name :op1 "Mary")) :ARG1 (c / city))')
    align = align_lexical(g, "Mary visited the city .")
    assert align["v"] == [1] and align["c"] == [3]
    assert align[g.constant_node_id(2)] == [0]
    assert "p" not in align


# -- models ------------------------------------------------------------------


def models(init: str = "structured"):
    examples, feat = corpus()
    return examples, FactGraph(config_for(init, feat), feat), FactGraphE(config_for(init, feat), feat)


def test_sentence_score_deterministic():
    examples, fg, _ = models()
    logits, alpha = fg.forward(fg.prepare(examples[:3]))
    np.testing.assert_allclose(ad.softmax(logits).data.sum(axis=1), 1.0, atol=1e-12)
    first = [sentence_score(ex, fg) for ex in examples[:3]]
    again = FactGraph(fg.config, fg.featurizer)
    assert [sentence_score(ex, again) for ex in examples[:3]] == first
    assert all(lab == int(p > 0.5) for lab, p in first)


def test_edge_scores_cover_every_edge():
    examples, _, fge = models()
    ex = examples[0]
    preds = edge_scores(ex, fge)
    assert [p.edge for p in preds] == [tuple(str(x) for x in e) for e in ex.summary_graph.edges]
    assert all(0 <= p.probability <= 1 for p in preds)


def test_unaligned_node_has_zero_text_part():
    examples, _, fge = models()
    ex = examples[0]
    node = next(iter(ex.alignments))
    partial = replace(ex, alignments={k: v for k, v in ex.alignments.items() if k != node})
    p = fge.featurizer.prepare(partial)
    reps, _ = fge.node_reps([p])
    d = fge.enc.d
    row = p.nodes.index(node)
    assert np.all(reps.data[row, :d] == 0)
    assert np.any(reps.data[row, d:] != 0)


def test_fallback_alignment_warns():
    examples, _, fge = models()
    with pytest.warns(MissingAlignments):
        fge.featurizer.prepare(replace(examples[1], alignments=None))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fge.featurizer.prepare(replace(examples[2]))


@pytest.mark.parametrize("init", ["random", "structured"])
def test_graph_part_is_linear_in_duplicated_documents(init):
    examples, feat = corpus()
    ex = examples[0]
    sent = ex.document[0]
    one = replace(ex, document=[sent], doc_graphs=[ex.doc_graphs[0]])
    two = replace(ex, document=[sent, sent], doc_graphs=[ex.doc_graphs[0]] * 2)
    f1 = Featurizer(feat.vocab, feat.embedder, k=1, max_len=feat.max_len)
    f2 = Featurizer(feat.vocab, feat.embedder, k=2, max_len=feat.max_len)
    cfg = config_for(init, feat)
    r1, _ = FactGraphE(cfg, f1).node_reps([f1.prepare(one)])
    r2, _ = FactGraphE(cfg, f2).node_reps([f2.prepare(two)])
    d = cfg.backbone.d_model
    np.testing.assert_allclose(r2.data[:, d:], 2 * r1.data[:, d:], rtol=1e-12, atol=1e-12)
    mean_cfg = config_for(init, feat, edge_graph_sum="mean")
    r3, _ = FactGraphE(mean_cfg, f2).node_reps([f2.prepare(two)])
    np.testing.assert_allclose(r3.data[:, d:], r1.data[:, d:], rtol=1e-12, atol=1e-12)


def test_edgeless_graph_routes_to_fallback():
    examples, fg, fge = models()
    ex = examples[0]
    lone = replace(ex, summary_graph=parse_penman("(h / happy-01)"), alignments={})
    with pytest.raises(NoEdges):
        fge.predict_sentences([lone])
    assert fge.predict_sentences([lone], fallback=fg).tolist() == fg.predict([lone]).tolist()
    assert fge.loss(fge.prepare([lone])).data == 0.0


def test_featurizer_state_round_trip():
    examples, feat = corpus()
    back = Featurizer.from_state(feat.state())
    a, b = feat.prepare(examples[0]), back.prepare(examples[0])
    assert a.doc_words == b.doc_words and a.selected == b.selected and a.edges == b.edges
    assert back.boundary_ids() == feat.boundary_ids() and len(feat.boundary_ids()) >= 1


@pytest.mark.parametrize("n_edges", range(1, 8))
def test_or_exhaustive_small(n_edges):
    for labels in itertools.product((0, 1), repeat=n_edges):
        assert aggregate_edges(labels) == int(any(labels))
