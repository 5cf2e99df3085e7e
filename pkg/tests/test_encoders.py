from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factgraph import autodiff as ad
from factgraph.autodiff import Tensor
from factgraph.backbone import (
    FLAG_BOUNDARY,
    FLAG_POOL_TRIGRAM,
    FLAG_TRIGRAM,
    FLAG_UNIGRAM,
    structured_layout,
)
from factgraph.canon import (
    CLS,
    FORWARD,
    PAD,
    REVERSE,
    SELF,
    SEP,
    TokenGraph,
    amr_to_token_graph,
    build_vocab,
    label_corpus,
)
from factgraph.encoders import (
    BackboneConfig,
    EmptyDocumentGraphs,
    EmptyGraphInput,
    Encoders,
    ModelConfig,
    OverLength,
    attend_pool,
    classify,
    make_graph_batch,
    make_text_batch,
    masked_node_loss,
    masked_node_pretrain_step,
    rgcn_conv,
)
from graphgen import random_amr
from minimodel import mini_config

RNG = np.random.default_rng(0)


def test_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(vocab_size=10, d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        BackboneConfig(vocab_size=10, init="pretrained")
    with pytest.raises(ValueError):
        BackboneConfig(vocab_size=10, d_model=64, n_heads=4)  # structured layout does not fit
    BackboneConfig(vocab_size=10, d_model=64, n_heads=4, init="random")
    with pytest.raises(ValueError):
        ModelConfig(BackboneConfig(vocab_size=10), pool_heads=3)
    cfg = mini_config(20)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_text_batch_layout():
    doc = [[10, 11], [12]]
    summ = [[20], [21, 22]]
    b = make_text_batch([(doc, summ), ([[13]], [[23]])], max_len=16)
    assert b.ids[0].tolist() == [CLS, 10, 11, 12, SEP, 20, 21, 22, SEP]
    assert b.segments[0].tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1]
    assert b.summary_words[0] == [[5], [6, 7]]
    assert b.ids[1].tolist()[:5] == [CLS, 13, SEP, 23, SEP]
    assert b.ids[1, 5] == PAD and not b.valid[1, 5:].any()
    cut = make_text_batch([(doc, summ)], max_len=8)
    assert cut.truncated == [True]
    assert cut.ids[0].tolist() == [CLS, 10, 11, SEP, 20, 21, 22, SEP]
    with pytest.raises(OverLength):
        make_text_batch([(doc, [[1]] * 10)], max_len=8)


def test_graph_batch_flat_indices():
    rng = np.random.default_rng(1)
    graphs = [random_amr(rng) for _ in range(3)]
    vocab = build_vocab(label_corpus(graphs), max_size=60)
    tgs = [amr_to_token_graph(g, vocab) for g in graphs]
    b = make_graph_batch(tgs, [1, 0, 0])
    T = b.width
    assert b.sizes == [len(t) for t in tgs]
    assert b.segments[0, : len(tgs[0])].all() and not b.segments[1].any()
    assert np.array_equal(b.src[: len(tgs[0].src)], tgs[0].src)
    k = len(tgs[0].src)
    assert np.array_equal(b.src[k : k + len(tgs[1].src)], tgs[1].src + T)
    with pytest.raises(EmptyGraphInput):
        empty = np.zeros(0, np.int64)
        make_graph_batch([TokenGraph(empty, (), (), empty, empty, empty)])


def test_rgcn_by_hand():
    d, m = 4, 3
    h = RNG.standard_normal((3, d))
    W = [RNG.standard_normal((d, m)) for _ in range(3)]
    # 0 -> 1 and 0 -> 2 forward, 2 -> 1 forward, matching reverse edges, self loops
    src = np.array([0, 0, 2, 1, 2, 1, 0, 1, 2])
    dst = np.array([1, 2, 1, 0, 0, 2, 0, 1, 2])
    et = np.array([FORWARD] * 3 + [REVERSE] * 3 + [SELF] * 3)
    out = rgcn_conv(Tensor(h), src, dst, et, [Tensor(w) for w in W], eps=1e-12).data
    n = (h - h.mean(1, keepdims=True)) / h.std(1, keepdims=True)
    expected = np.zeros((3, m))
    for v in range(3):
        for r in range(3):
            us = [s for s, t, e in zip(src, dst, et) if t == v and e == r]
            for u in us:
                expected[v] += n[u] @ W[r] / len(us)
    np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)
    only_self = rgcn_conv(Tensor(h), np.arange(3), np.arange(3), np.full(3, SELF), [Tensor(w) for w in W]).data
    np.testing.assert_allclose(only_self, n @ W[SELF], rtol=1e-10, atol=1e-12)


def _pool_inputs(B=2, K=4, d=8, seed=0):
    rng = np.random.default_rng(seed)
    z_s = Tensor(rng.standard_normal((B, d)))
    z_d = Tensor(rng.standard_normal((B, K, d)))
    ws = [Tensor(rng.standard_normal((d, d))) for _ in range(3)]
    return z_s, z_d, ws


def test_pool_masks_missing_documents():
    z_s, z_d, ws = _pool_inputs()
    mask = np.array([[True, True, False, False], [True, True, True, True]])
    g, alpha = attend_pool(z_s, z_d, mask, *ws, n_heads=2)
    assert np.all(alpha[0, :, 2:] == 0.0)
    g_cut, _ = attend_pool(Tensor(z_s.data[:1]), Tensor(z_d.data[:1, :2]), mask[:1, :2], *ws, n_heads=2)
    np.testing.assert_allclose(g.data[0], g_cut.data[0], atol=1e-12)
    with pytest.raises(EmptyDocumentGraphs):
        attend_pool(z_s, z_d, np.zeros((2, 4), bool), *ws, n_heads=2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_pool_weights_and_permutation(seed, K):
    z_s, z_d, ws = _pool_inputs(B=3, K=K, seed=seed)
    mask = np.ones((3, K), bool)
    g, alpha = attend_pool(z_s, z_d, mask, *ws, n_heads=4)
    assert np.abs(alpha.sum(axis=-1) - 1.0).max() <= 1e-12
    perm = np.random.default_rng(seed).permutation(K)
    g2, alpha2 = attend_pool(z_s, Tensor(z_d.data[:, perm]), mask, *ws, n_heads=4)
    np.testing.assert_allclose(alpha2, alpha[:, :, perm], atol=1e-12)
    assert np.abs(g2.data - g.data).max() <= 1e-10


def test_classify_concatenates():
    t, g = RNG.standard_normal((2, 3)), RNG.standard_normal((2, 3))
    W, b = RNG.standard_normal((6, 2)), RNG.standard_normal(2)
    out = classify(Tensor(t), Tensor(g), Tensor(W), Tensor(b)).data
    np.testing.assert_allclose(out, np.hstack([t, g]) @ W + b)


def test_building_block_gradients():
    d, m = 6, 4
    rng = np.random.default_rng(5)
    h = Tensor(rng.standard_normal((4, d)), trainable=True)
    W = [Tensor(rng.standard_normal((d, m)), trainable=True) for _ in range(3)]
    gain = Tensor(1 + 0.1 * rng.standard_normal(d), trainable=True)
    src, dst = np.array([0, 1, 2, 1, 2, 3, 0, 1, 2, 3]), np.array([1, 2, 3, 0, 1, 2, 0, 1, 2, 3])
    et = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
    probe = rng.standard_normal((4, m))
    rep = ad.finite_diff_check(
        lambda: ad.sum_all(ad.mul(rgcn_conv(h, src, dst, et, W, gain, None, 1e-5), Tensor(probe))),
        [h, gain, *W],
    )
    assert rep.ok(1e-6), rep.per_tensor
    z_s = Tensor(rng.standard_normal((2, 8)), trainable=True)
    z_d = Tensor(rng.standard_normal((2, 3, 8)), trainable=True)
    ws = [Tensor(rng.standard_normal((8, 8)) * 0.5, trainable=True) for _ in range(3)]
    mask = np.array([[True, True, False], [True, True, True]])
    probe = rng.standard_normal((2, 8))
    rep = ad.finite_diff_check(
        lambda: ad.sum_all(ad.mul(attend_pool(z_s, z_d, mask, *ws, n_heads=2)[0], Tensor(probe))),
        [z_s, z_d, *ws],
    )
    assert rep.ok(1e-6), rep.per_tensor


def _encoder_and_graphs(init="random", n=4, seed=0):
    rng = np.random.default_rng(seed)
    graphs = [random_amr(rng, max_vars=6) for _ in range(n)]
    vocab = build_vocab(label_corpus(graphs), max_size=80)
    tgs = [amr_to_token_graph(g, vocab) for g in graphs]
    cfg = mini_config(len(vocab), init=init)
    return Encoders(cfg, heads=("sentence", "edge")), tgs


def test_parameter_inventory():
    enc, _ = _encoder_and_graphs()
    names = list(enc.params)
    assert all(not enc.params[n].trainable for n in names if n.startswith("backbone."))
    assert all(enc.params[n].trainable for n in names if not n.startswith("backbone."))
    assert enc.P("text.L0.pre.W_p").shape == (32, 8)
    assert enc.P("graph.L1.struct.W_forward").shape == (32, 8)
    assert enc.P("edge_cls.W").shape == (128, 2)


def test_residual_identity_bitwise():
    enc, tgs = _encoder_and_graphs()
    enc.zero_adapter_outputs()
    tb = make_text_batch([([[5, 6], [7]], [[8, 9]]), ([[5]], [[10]])], max_len=32)
    states, cls = enc.text_encode(tb)
    ref = enc.backbone_text(tb)
    assert np.array_equal(states.data, ref.data)
    assert np.array_equal(cls.data, ref.data[:, 0])
    gb = make_graph_batch(tgs, [1, 0, 0, 0])
    assert np.array_equal(enc.graph_states(gb).data, enc.backbone_graph(gb).data)


@pytest.mark.parametrize("init", ["random", "structured"])
def test_graph_encoder_permutation_invariance(init):
    rng = np.random.default_rng(7)
    graphs = [random_amr(rng, max_vars=6) for _ in range(5)]
    vocab = build_vocab(label_corpus(graphs), max_size=80)
    if init == "random":
        cfg = mini_config(len(vocab))
    else:
        cfg = ModelConfig(BackboneConfig(vocab_size=len(vocab)), dtype="float64")
    enc = Encoders(cfg)
    for g in graphs:
        tg = amr_to_token_graph(g, vocab)
        _, z = enc.graph_encode(make_graph_batch([tg]))
        perm = rng.permutation(len(tg))
        _, zp = enc.graph_encode(make_graph_batch([tg.permuted(perm)]))
        assert np.abs(z.data - zp.data).max() <= 1e-10


def test_masked_node_pretraining_updates_structural_adapters_only():
    enc, tgs = _encoder_and_graphs()
    loss, n_masked = masked_node_loss(enc, tgs, 0.0, np.random.default_rng(0))
    assert n_masked == 0 and float(loss.data) == 0.0
    before = {n: t.data.copy() for n, t in enc.params.items()}
    opt = ad.Adam(enc.params.trainable(), lr=1e-2)
    losses = [masked_node_pretrain_step(enc, opt, tgs, mask_rate=0.3, seed=0) for _ in range(25)]
    changed = {n for n, t in enc.params.items() if not np.array_equal(t.data, before[n])}
    assert changed and all(".struct." in n for n in changed)
    assert losses[-1] < losses[0]


# -- structured backbone ---------------------------------------------------


def _structured_encoder(vocab_size=60, boundary=(7,)):
    cfg = ModelConfig(BackboneConfig(vocab_size=vocab_size, boundary_ids=boundary), dtype="float64")
    return Encoders(cfg), structured_layout(cfg.backbone)


def _flags(enc, lay, doc, summary):
    tb = make_text_batch([([[t] for t in doc], [[t] for t in summary])], max_len=256)
    h = enc.backbone_text(tb).data[0]
    # summary tokens without the closing dot and [SEP]: boundary windows are not pooled
    seg1 = np.flatnonzero(tb.segments[0] == 1)[:-2]
    return h, seg1


def test_structured_backbone_flags_copies_and_novelty():
    enc, lay = _structured_encoder()
    rng = np.random.default_rng(0)
    dot = 7
    sentences = [list(rng.choice(np.arange(10, 60), size=6, replace=False)) for _ in range(3)]
    doc = [t for s in sentences for t in [*s, dot]]
    copied = [*sentences[1], dot]
    h, seg1 = _flags(enc, lay, doc, copied)
    tri = h[seg1, lay.flag(FLAG_TRIGRAM)]
    assert np.all(tri < -1.0), tri
    assert h[0, lay.flag(FLAG_POOL_TRIGRAM)] < -1.5
    # a token never seen in the document makes its trigram window novel
    novel = list(copied)
    unused = next(t for t in range(10, 60) if t not in doc)
    novel[3] = unused
    h, seg1 = _flags(enc, lay, doc, novel)
    tri = h[seg1, lay.flag(FLAG_TRIGRAM)]
    assert np.all(tri[2:5] > 1.0) and np.all(tri[[0, 1, 5]] < -1.0), tri
    uni = h[seg1, lay.flag(FLAG_UNIGRAM)]
    assert uni[3] > 1.0 and np.all(np.delete(uni, 3) < -1.0), uni
    assert h[0, lay.flag(FLAG_POOL_TRIGRAM)] > -1.0


def test_structured_backbone_boundary_flag():
    enc, lay = _structured_encoder()
    tb = make_text_batch([([[7], [12]], [[13]])], max_len=16)
    h = enc.backbone_text(tb).data[0]
    col = h[:, lay.flag(FLAG_BOUNDARY)]
    # CLS, the dot and both SEPs carry the marker
    ids = tb.ids[0]
    marked = np.isin(ids, [CLS, SEP, 7])
    assert col[marked].min() > col[~marked].max() + 0.5


def test_structured_layout_fits():
    lay = structured_layout(BackboneConfig(vocab_size=10))
    assert lay.F.stop <= 128
    assert lay.T.stop == lay.P.start and lay.K.stop == lay.POS.start
