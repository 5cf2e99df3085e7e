"""Sentence-level and edge-level factuality models.

:class:`FactGraph` encodes the document and summary text jointly, encodes the
summary graph and the ``k`` most similar document graphs, pools the document
graphs with attention keyed by the summary graph and classifies ``[t; g]``.

:class:`FactGraphE` classifies each summary-graph edge from the text and graph
representations of its two endpoints; a sentence is NonFactual as soon as one
edge is.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .amr import AmrGraph, Constant
from .autodiff import Tensor
from .canon import (
    SubwordVocab,
    TokenGraph,
    amr_to_token_graph,
    build_vocab,
    concat_token_graphs,
    label_corpus,
    split_words,
    tokenize,
)
from .data import FACTUAL, NONFACTUAL, FactualityExample
from .encoders import Encoders, ModelConfig, make_graph_batch, make_text_batch

__all__ = [
    "EmptyDocument",
    "SpanOutOfBounds",
    "NoEdges",
    "EmptyInput",
    "MissingAlignments",
    "EdgePrediction",
    "TfidfEmbedder",
    "select_doc_graphs",
    "align_lexical",
    "edge_label_from_spans",
    "aggregate_edges",
    "summary_score",
    "Featurizer",
    "Prepared",
    "FactGraph",
    "FactGraphE",
    "sentence_score",
    "edge_scores",
]


class EmptyDocument(ValueError):
    pass


class SpanOutOfBounds(ValueError):
    pass


class NoEdges(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class MissingAlignments(UserWarning):
    pass


@dataclass(frozen=True)
class EdgePrediction:
    edge: tuple[str, str, str]
    label: int
    probability: float  # probability of NonFactual


# -- document graph selection ------------------------------------------------


def _terms(sentence: str) -> list[str]:
    return [w.lower() for w, _, _ in split_words(sentence) if re.match(r"\w", w)]


class TfidfEmbedder:
    """Term-frequency vectors weighted by smoothed inverse document frequency."""

    def __init__(self, idf: dict[str, float], n_docs: int):
        self.idf = idf
        self.n_docs = n_docs
        self.default_idf = math.log((1 + n_docs) / 1) + 1.0

    @classmethod
    def fit(cls, sentences: Iterable[str]) -> "TfidfEmbedder":
        df: Counter = Counter()
        n = 0
        for s in sentences:
            df.update(set(_terms(s)))
            n += 1
        idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
        return cls(idf, n)

    def embed(self, sentence: str) -> dict[str, float]:
        tf = Counter(_terms(sentence))
        return {t: c * self.idf.get(t, self.default_idf) for t, c in tf.items()}

    @staticmethod
    def cosine(a: dict[str, float], b: dict[str, float]) -> float:
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(v * b.get(t, 0.0) for t, v in a.items()) / (na * nb)


def select_doc_graphs(
    doc_sentences: Sequence[str], summary: str, k: int = 5, embedder: TfidfEmbedder | None = None
) -> list[int]:
    """Indices of the ``k`` document sentences most similar to ``summary``.

    Ranked by cosine similarity, ties in document order. Without an embedder
    the idf statistics come from the document itself.
    """
    if not doc_sentences:
        raise EmptyDocument("document has no sentences")
    if k < 1:
        raise ValueError("k must be >= 1")
    emb = embedder or TfidfEmbedder.fit(doc_sentences)
    s = emb.embed(summary)
    sims = [emb.cosine(s, emb.embed(d)) for d in doc_sentences]
    order = sorted(range(len(doc_sentences)), key=lambda i: (-sims[i], i))
    return order[: min(k, len(order))]


# -- alignments and edge labels ----------------------------------------------

_SENSE = re.compile(r"-\d+$")


def _stem(word: str) -> str:
    for suffix in ("ing", "ed", "es", "s", "d"):
        if len(word) > len(suffix) + 2 and word.endswith(suffix):
            return word[: -len(suffix)]
    return word


def align_lexical(graph: AmrGraph, sentence: str) -> dict[str, list[int]]:
    """Fallback aligner: a node matches a word when their lowercased, crudely
    stemmed forms agree (concept sense suffixes removed). Lossy by design."""
    words = [w.lower() for w, _, _ in split_words(sentence)]
    stems = [_stem(w) for w in words]
    out: dict[str, list[int]] = {}

    def match(label: str) -> list[int]:
        label = _SENSE.sub("", label.lower())
        return [i for i, (w, s) in enumerate(zip(words, stems)) if label in (w, s) or _stem(label) == s]

    for v, concept in graph.instances.items():
        idx = match(concept)
        if idx:
            out[v] = idx
    for i, (_, _, target) in enumerate(graph.edges):
        if isinstance(target, Constant):
            idx = match(target.value)
            if idx:
                out[graph.constant_node_id(i)] = idx
    return out


def edge_endpoints(graph: AmrGraph) -> list[tuple[str, str]]:
    return [graph.edge_endpoints(i) for i in range(len(graph.edges))]


def edge_label_from_spans(
    summary_graph: AmrGraph,
    alignments: dict[str, Sequence[int]],
    nonfactual_spans: Sequence[tuple[int, int]],
    sentence: str,
) -> list[int]:
    """Per-edge labels: NonFactual iff an endpoint is aligned to a word inside a span.

    ``alignments`` maps node ids to word indices of ``sentence``; spans are
    ``[start, end)`` character offsets. A word is inside a span when their
    character ranges overlap.
    """
    words = split_words(sentence)
    for start, end in nonfactual_spans:
        if not (0 <= start <= end <= len(sentence)):
            raise SpanOutOfBounds(f"span ({start}, {end}) outside sentence of length {len(sentence)}")
    flagged_words = {
        i for i, (_, ws, we) in enumerate(words) for s, e in nonfactual_spans if ws < e and we > s
    }
    flagged_nodes = {node for node, idx in alignments.items() if flagged_words.intersection(idx)}
    return [
        NONFACTUAL if (u in flagged_nodes or v in flagged_nodes) else FACTUAL
        for u, v in edge_endpoints(summary_graph)
    ]


def aggregate_edges(labels: Sequence[int]) -> int:
    """NonFactual iff any edge is NonFactual."""
    if len(labels) == 0:
        raise NoEdges("summary graph has no edges")
    return NONFACTUAL if any(l == NONFACTUAL for l in labels) else FACTUAL


def summary_score(sentence_labels: Sequence[int]) -> float:
    """Fraction of factual sentences."""
    if len(sentence_labels) == 0:
        raise EmptyInput("no sentence labels")
    return float(np.mean([1.0 if l == FACTUAL else 0.0 for l in sentence_labels]))


# -- featurization -----------------------------------------------------------


@dataclass
class Prepared:
    example: FactualityExample
    doc_words: list[list[int]]
    summary_words: list[list[int]]
    selected: list[int]
    summary_graph: TokenGraph
    doc_graphs: list[TokenGraph]
    alignments: dict[str, list[int]]
    nodes: list[str]  # summary graph node ids with an edge role (variables, constants)
    edges: list[tuple[int, int]]  # indices into ``nodes``
    edge_labels: list[int] | None
    unaligned: list[str] = field(default_factory=list)


SENTENCE_END = (".", "!", "?")


class Featurizer:
    """Turns examples into token ids and token graphs for a fixed vocabulary."""

    def __init__(self, vocab: SubwordVocab, embedder: TfidfEmbedder, k: int = 5,
                 max_len: int = 256, max_nodes: int = 512):
        self.vocab = vocab
        self.embedder = embedder
        self.k = k
        self.max_len = max_len
        self.max_nodes = max_nodes
        self._cache: dict[int, Prepared] = {}

    @classmethod
    def fit(cls, examples: Sequence[FactualityExample], k: int = 5, max_len: int = 256,
            max_size: int = 8192) -> "Featurizer":
        text = [w.lower() for ex in examples for s in [*ex.document, ex.summary] for w, _, _ in split_words(s)]
        graphs = [g for ex in examples for g in [*ex.doc_graphs, ex.summary_graph]]
        vocab = build_vocab(text + label_corpus(graphs), max_size=max_size, strict=False)
        embedder = TfidfEmbedder.fit(s for ex in examples for s in ex.document)
        return cls(vocab, embedder, k=k, max_len=max_len)

    def state(self) -> dict:
        return {"vocab": self.vocab.tokens, "idf": self.embedder.idf, "n_docs": self.embedder.n_docs,
                "k": self.k, "max_len": self.max_len, "max_nodes": self.max_nodes}

    @classmethod
    def from_state(cls, state: dict) -> "Featurizer":
        vocab = SubwordVocab(list(state["vocab"]))
        return cls(vocab, TfidfEmbedder(dict(state["idf"]), state["n_docs"]), state["k"],
                   state["max_len"], state["max_nodes"])

    def boundary_ids(self) -> tuple[int, ...]:
        """Ids of sentence-final punctuation tokens."""
        return tuple(self.vocab.index[p] for p in SENTENCE_END if p in self.vocab.index)

    def words(self, sentence: str) -> list[list[int]]:
        return [tokenize(self.vocab, w.lower()) or [1] for w, _, _ in split_words(sentence)]

    def prepare(self, ex: FactualityExample) -> Prepared:
        cached = self._cache.get(id(ex))
        if cached is not None and cached.example is ex:
            return cached
        doc_words = [w for s in ex.document for w in self.words(s)]
        selected = select_doc_graphs(ex.document, ex.summary, self.k, self.embedder)
        g = ex.summary_graph
        align = ex.alignments if ex.alignments is not None else align_lexical(g, ex.summary)
        nodes = list(g.instances) + [g.constant_node_id(i) for i, e in enumerate(g.edges) if isinstance(e[2], Constant)]
        index = {n: i for i, n in enumerate(nodes)}
        edges = [(index[u], index[v]) for u, v in edge_endpoints(g)]
        labels = None
        if ex.label is not None:
            labels = edge_label_from_spans(g, align, ex.spans, ex.summary)
        n_words = len(split_words(ex.summary))
        align = {n: [i for i in idx if i < n_words] for n, idx in align.items()}
        unaligned = [n for n in nodes if not align.get(n)]
        if unaligned and ex.alignments is None:
            warnings.warn(f"{ex.id}: no aligned words for {len(unaligned)} nodes; their text part is zero",
                          MissingAlignments, stacklevel=2)
        prepared = Prepared(
            ex,
            doc_words,
            self.words(ex.summary),
            selected,
            amr_to_token_graph(g, self.vocab, self.max_nodes),
            [amr_to_token_graph(ex.doc_graphs[i], self.vocab, self.max_nodes) for i in selected],
            align,
            nodes,
            edges,
            labels,
            unaligned,
        )
        self._cache[id(ex)] = prepared
        return prepared


# -- models ------------------------------------------------------------------


def _row_gather(z: Tensor, rows: np.ndarray, shape: tuple[int, ...]) -> Tensor:
    return ad.reshape(ad.gather_rows(z, rows.reshape(-1)), shape)


class _Model:
    heads: tuple[str, ...] = ()

    def __init__(self, config: ModelConfig, featurizer: Featurizer):
        self.config = config
        self.featurizer = featurizer
        self.enc = Encoders(config, heads=self.heads)

    @property
    def params(self):
        return self.enc.params

    def prepare(self, examples: Sequence[FactualityExample]) -> list[Prepared]:
        return [self.featurizer.prepare(ex) for ex in examples]

    def text_batch(self, batch: Sequence[Prepared]):
        return make_text_batch([(p.doc_words, p.summary_words) for p in batch], self.featurizer.max_len)


class FactGraph(_Model):
    """Sentence-level model: ``softmax(W [t; g])``."""

    heads = ("sentence",)

    def forward(self, batch: Sequence[Prepared]) -> tuple[Tensor, np.ndarray]:
        B = len(batch)
        _, t = self.enc.text_encode(self.text_batch(batch))
        graphs = [p.summary_graph for p in batch]
        segments = [1] * B
        K = max(len(p.doc_graphs) for p in batch)
        slots = np.zeros((B, K), dtype=np.int64)
        mask = np.zeros((B, K), dtype=bool)
        for b, p in enumerate(batch):
            for j, g in enumerate(p.doc_graphs):
                slots[b, j] = len(graphs)
                mask[b, j] = True
                graphs.append(g)
                segments.append(0)
        _, z = self.enc.graph_encode(make_graph_batch(graphs, segments))
        z_s = _row_gather(z, np.arange(B), (B, self.enc.d))
        z_d = _row_gather(z, slots, (B, K, self.enc.d))
        g, alpha = self.enc.pool(z_s, z_d, mask)
        return self.enc.classify(t, g), alpha

    def loss(self, batch: Sequence[Prepared]) -> Tensor:
        logits, _ = self.forward(batch)
        return ad.cross_entropy(logits, [p.example.label for p in batch])

    def predict_proba(self, examples: Sequence[FactualityExample], batch_size: int = 16) -> np.ndarray:
        """``P(NonFactual)`` per example."""
        prepared = self.prepare(examples)
        out = []
        for i in range(0, len(prepared), batch_size):
            logits, _ = self.forward(prepared[i : i + batch_size])
            out.append(ad.softmax(logits).data[:, NONFACTUAL])
        return np.concatenate(out) if out else np.zeros(0)

    def predict(self, examples: Sequence[FactualityExample], batch_size: int = 16) -> np.ndarray:
        return (self.predict_proba(examples, batch_size) > 0.5).astype(np.int64)


class FactGraphE(_Model):
    """Edge-level model over ``r_e = [r_u; r_v]``, ``r_v = [r_t; r_g]``."""

    heads = ("edge",)

    def node_reps(self, batch: Sequence[Prepared]) -> tuple[Tensor, list[int]]:
        """Representations of every summary-graph node in ``batch`` and per-example offsets."""
        d = self.enc.d
        tb = self.text_batch(batch)
        h, _ = self.enc.text_encode(tb)
        B, T, _ = h.shape
        offsets = np.cumsum([0] + [len(p.nodes) for p in batch])
        n_nodes = int(offsets[-1])

        # r_t: sum over aligned words of the mean of each word's subword states
        m_text = np.zeros((n_nodes, B * T), dtype=self.enc.dtype)
        for b, p in enumerate(batch):
            positions = tb.summary_words[b]
            for j, node in enumerate(p.nodes):
                for w in p.alignments.get(node, ()):
                    if w < len(positions) and positions[w]:
                        m_text[offsets[b] + j, [b * T + q for q in positions[w]]] += 1.0 / len(positions[w])
        r_t = ad.matmul(Tensor(m_text), ad.reshape(h, (B * T, d)))

        # r_g: summary graph concatenated with each selected document graph
        graphs, segments, runs = [], [], []
        for b, p in enumerate(batch):
            for dg in p.doc_graphs:
                graphs.append(concat_token_graphs([p.summary_graph, dg], ["", "doc:"]))
                segments.append(np.r_[np.ones(len(p.summary_graph), np.int64), np.zeros(len(dg), np.int64)])
                runs.append(b)
        gb = make_graph_batch(graphs, segments)
        hg, _ = self.enc.graph_encode(gb)
        G, Tg, _ = hg.shape
        m_graph = np.zeros((n_nodes, G * Tg), dtype=self.enc.dtype)
        origin_pos = [_origin_positions(p.summary_graph) for p in batch]
        for r, b in enumerate(runs):
            p = batch[b]
            weight = 1.0 if self.config.edge_graph_sum == "sum" else 1.0 / len(p.doc_graphs)
            for j, node in enumerate(p.nodes):
                pos = origin_pos[b].get(node, [])
                for q in pos:
                    m_graph[offsets[b] + j, r * Tg + q] += weight / len(pos)
        r_g = ad.matmul(Tensor(m_graph), ad.reshape(hg, (G * Tg, d)))
        return ad.concat([r_t, r_g], axis=1), list(offsets)

    def forward(self, batch: Sequence[Prepared]) -> Tensor:
        reps, offsets = self.node_reps(batch)
        u = np.array([offsets[b] + e[0] for b, p in enumerate(batch) for e in p.edges], dtype=np.int64)
        v = np.array([offsets[b] + e[1] for b, p in enumerate(batch) for e in p.edges], dtype=np.int64)
        r_e = ad.concat([ad.gather_rows(reps, u), ad.gather_rows(reps, v)], axis=1)
        return ad.add(ad.matmul(r_e, self.enc.P("edge_cls.W")), self.enc.P("edge_cls.b"))

    def loss(self, batch: Sequence[Prepared]) -> Tensor:
        batch = [p for p in batch if p.edges]
        if not batch:
            return Tensor(np.zeros((), dtype=self.enc.dtype))
        labels = [l for p in batch for l in p.edge_labels]
        return ad.cross_entropy(self.forward(batch), labels)

    def edge_proba(self, examples: Sequence[FactualityExample], batch_size: int = 16) -> list[np.ndarray]:
        """``P(NonFactual)`` for every edge of every example (empty for edgeless graphs)."""
        prepared = self.prepare(examples)
        out: list[np.ndarray] = []
        for i in range(0, len(prepared), batch_size):
            chunk = prepared[i : i + batch_size]
            live = [p for p in chunk if p.edges]
            probs = ad.softmax(self.forward(live)).data[:, NONFACTUAL] if live else np.zeros(0)
            pos = 0
            for p in chunk:
                out.append(probs[pos : pos + len(p.edges)])
                pos += len(p.edges)
        return out

    def predict_sentences(
        self, examples: Sequence[FactualityExample], fallback: FactGraph | None = None, batch_size: int = 16
    ) -> np.ndarray:
        """Sentence labels by OR over edge labels; edgeless graphs use ``fallback``."""
        labels = []
        for ex, probs in zip(examples, self.edge_proba(examples, batch_size)):
            try:
                labels.append(aggregate_edges((probs > 0.5).astype(int).tolist()))
            except NoEdges:
                if fallback is None:
                    raise
                labels.append(int(fallback.predict([ex])[0]))
        return np.asarray(labels, dtype=np.int64)


def _origin_positions(tg: TokenGraph) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for i, o in enumerate(tg.origin):
        out.setdefault(o, []).append(i)
    return out


def sentence_score(example: FactualityExample, model: FactGraph) -> tuple[int, float]:
    """Label and ``P(NonFactual)`` for one example."""
    p = float(model.predict_proba([example])[0])
    return int(p > 0.5), p


def edge_scores(example: FactualityExample, model: FactGraphE) -> list[EdgePrediction]:
    probs = model.edge_proba([example])[0]
    return [
        EdgePrediction(tuple(str(x) for x in e), int(q > 0.5), float(q))
        for e, q in zip(example.summary_graph.edges, probs)
    ]
