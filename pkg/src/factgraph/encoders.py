"""Frozen transformer backbone with text and structural adapters.

The same backbone weights serve two encoders:

* the text encoder wraps every feed-forward sub-layer with a bottleneck
  adapter before and after it, ``h + W_o relu(W_p LN(h))``;
* the graph encoder places a structural adapter before the feed-forward
  sub-layer, ``h + W_e relu(RGCN(LN(h)))``, and a plain adapter after it.

Graph inputs get no position embeddings, so node order carries no
information. Weight matrices use the row-vector convention: ``x @ W`` with
``W`` of shape ``[in, out]``.

Only tensors outside ``backbone.*`` are trainable.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import random_backbone, structured_backbone, structured_layout
from .canon import CLS, MASK, PAD, SEP, TokenGraph

__all__ = [
    "BackboneConfig",
    "ModelConfig",
    "ParamStore",
    "Encoders",
    "TextBatch",
    "GraphBatch",
    "OverLength",
    "EmptyGraphInput",
    "EmptyDocumentGraphs",
    "make_text_batch",
    "make_graph_batch",
    "rgcn_conv",
    "attend_pool",
    "classify",
    "masked_node_loss",
    "masked_node_pretrain_step",
]

NEG_INF = -1e9


class OverLength(ValueError):
    pass


class EmptyGraphInput(ValueError):
    pass


class EmptyDocumentGraphs(ValueError):
    pass


@dataclass
class BackboneConfig:
    vocab_size: int
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    max_len: int = 256
    seed: int = 0
    # "structured" is the copy-aware layout of factgraph.backbone; "random"
    # draws everything i.i.d. with tied query/key projections
    init: str = "structured"
    content_dims: int = 24
    hash_dims: int = 27
    boundary_ids: tuple[int, ...] = ()  # tokens that end a sentence
    pos_freqs: int = 8
    hash_threshold: float = 1.5
    ffn_scale: float = 0.1
    # random init only
    qk_scale: float = 1.0
    pos_scale: float = 0.1
    seg_scale: float = 0.5
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.init not in ("structured", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        self.boundary_ids = tuple(int(i) for i in self.boundary_ids)
        if self.init == "structured":
            structured_layout(self)


@dataclass
class ModelConfig:
    backbone: BackboneConfig
    adapter_size: int = 32
    pool_heads: int = 4
    k: int = 5
    seed: int = 1
    dtype: str = "float64"
    adapter_init: float = 0.02
    text_order: str = "document-summary"
    edge_graph_sum: str = "sum"  # "sum" over document graphs, or "mean"

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.backbone.d_model % self.pool_heads:
            raise ValueError("d_model must be divisible by pool_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


class ParamStore(dict):
    """Ordered ``name -> Tensor`` mapping."""

    def add(self, name: str, array: np.ndarray, trainable: bool) -> Tensor:
        t = Tensor(array, trainable=trainable, name=name)
        self[name] = t
        return t

    def trainable(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self.items() if t.trainable and n.startswith(prefix)]

    def frozen(self) -> list[Tensor]:
        return [t for t in self.values() if not t.trainable]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.items()}

    def flags(self) -> dict[str, bool]:
        return {n: t.trainable for n, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            if name not in self:
                raise KeyError(f"unknown parameter {name!r}")
            if self[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {self[name].shape}")
            self[name].data = np.array(arr, dtype=self[name].dtype)

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None


# -- batches -----------------------------------------------------------------


@dataclass
class TextBatch:
    ids: np.ndarray  # [B, T]
    segments: np.ndarray  # [B, T]
    valid: np.ndarray  # [B, T] bool
    summary_words: list[list[list[int]]] = field(default_factory=list)  # per example, per word: positions
    truncated: list[bool] = field(default_factory=list)


def make_text_batch(
    examples: Sequence[tuple[Sequence[Sequence[int]], Sequence[Sequence[int]]]],
    max_len: int,
) -> TextBatch:
    """Pack ``(document words, summary words)`` pairs, each a list of per-word token ids.

    Layout is ``[CLS] document [SEP] summary [SEP]``; the document tail is cut
    when the pair does not fit.
    """
    rows, segs, word_pos, truncated = [], [], [], []
    for doc_words, sum_words in examples:
        sum_len = sum(len(w) for w in sum_words)
        budget = max_len - 3 - sum_len
        if budget < 0:
            raise OverLength(f"summary of {sum_len} tokens does not fit max_len={max_len}")
        doc_ids: list[int] = []
        cut = False
        for w in doc_words:
            if len(doc_ids) + len(w) > budget:
                cut = True
                break
            doc_ids.extend(w)
        ids = [CLS] + doc_ids + [SEP]
        seg = [0] * len(ids)
        positions = []
        for w in sum_words:
            positions.append(list(range(len(ids), len(ids) + len(w))))
            ids.extend(w)
        ids.append(SEP)
        seg += [1] * (len(ids) - len(seg))
        rows.append(ids)
        segs.append(seg)
        word_pos.append(positions)
        truncated.append(cut)
    T = max(len(r) for r in rows)
    B = len(rows)
    ids = np.full((B, T), PAD, dtype=np.int64)
    seg = np.zeros((B, T), dtype=np.int64)
    valid = np.zeros((B, T), dtype=bool)
    for b, (r, s) in enumerate(zip(rows, segs)):
        ids[b, : len(r)] = r
        seg[b, : len(s)] = s
        valid[b, : len(r)] = True
    return TextBatch(ids, seg, valid, word_pos, truncated)


@dataclass
class GraphBatch:
    ids: np.ndarray  # [G, T]
    segments: np.ndarray  # [G, T]
    valid: np.ndarray  # [G, T] bool
    src: np.ndarray  # flat node indices g * T + i
    dst: np.ndarray
    etype: np.ndarray
    sizes: list[int]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


def make_graph_batch(
    graphs: Sequence[TokenGraph], segments: Sequence[np.ndarray | int] | None = None
) -> GraphBatch:
    """Pad token graphs into one batch; edges become flat row indices."""
    if any(len(g) == 0 for g in graphs):
        raise EmptyGraphInput("token graph has no nodes")
    G = len(graphs)
    T = max(len(g) for g in graphs)
    ids = np.full((G, T), PAD, dtype=np.int64)
    seg = np.zeros((G, T), dtype=np.int64)
    valid = np.zeros((G, T), dtype=bool)
    src, dst, et = [], [], []
    for i, g in enumerate(graphs):
        n = len(g)
        ids[i, :n] = g.token_ids
        valid[i, :n] = True
        if segments is not None:
            seg[i, :n] = segments[i]
        src.append(g.src + i * T)
        dst.append(g.dst + i * T)
        et.append(g.etype)
    return GraphBatch(
        ids, seg, valid, np.concatenate(src), np.concatenate(dst), np.concatenate(et), [len(g) for g in graphs]
    )


# -- building blocks ---------------------------------------------------------


def rgcn_conv(
    h: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    etype: np.ndarray,
    weights: Sequence[Tensor],
    ln_gain: Tensor | None = None,
    ln_bias: Tensor | None = None,
    eps: float = 1e-12,
) -> Tensor:
    """Relational graph convolution over rows of ``h [N, d]``.

    ``g_v = sum_r sum_{u -> v under r} W_r LN(h_u) / c_{v,r}`` with
    ``c_{v,r}`` the number of type-``r`` edges into ``v``. ``weights`` holds
    one ``[d, m]`` matrix per edge type (forward, reverse, self).
    """
    n, _ = h.shape
    n_types = len(weights)
    m = weights[0].shape[1]
    normed = ad.layer_norm(h, ln_gain, ln_bias, eps=eps)
    proj = ad.matmul(normed, ad.concat(list(weights), axis=1))  # [N, R*m]
    proj = ad.reshape(proj, (n * n_types, m))
    counts = np.zeros((n, n_types))
    np.add.at(counts, (dst, etype), 1.0)
    coef = (1.0 / counts[dst, etype]).astype(h.dtype)[:, None]
    messages = ad.mul(ad.gather_rows(proj, src * n_types + etype), coef)
    return ad.scatter_add_rows(messages, dst, n)


def attend_pool(
    z_s: Tensor,
    z_docs: Tensor,
    doc_mask: np.ndarray,
    w_q: Tensor,
    w_k: Tensor,
    w_r: Tensor,
    n_heads: int,
) -> tuple[Tensor, np.ndarray]:
    """Multi-head attention pooling of document-graph vectors.

    ``z_s [B, d]`` is the query, ``z_docs [B, K, d]`` the keys and values and
    ``doc_mask [B, K]`` marks real documents. Each head attends with scaled
    dot products over its slice; head outputs are concatenated and mixed by
    ``w_r``. Returns the pooled ``[B, d]`` and the weights ``[B, heads, K]``.
    """
    B, K, d = z_docs.shape
    if not np.all(doc_mask.any(axis=1)):
        raise EmptyDocumentGraphs("every example needs at least one document graph")
    dh = d // n_heads
    q = ad.matmul(z_s, w_q)  # [B, d]
    k = ad.matmul(z_docs, w_k)  # [B, K, d]
    q = ad.reshape(q, (B * n_heads, 1, dh))
    k = ad.reshape(ad.transpose(ad.reshape(k, (B, K, n_heads, dh)), (0, 2, 3, 1)), (B * n_heads, dh, K))
    v = ad.reshape(ad.transpose(ad.reshape(z_docs, (B, K, n_heads, dh)), (0, 2, 1, 3)), (B * n_heads, K, dh))
    scores = ad.scale(ad.matmul(q, k), 1.0 / math.sqrt(dh))  # [B*H, 1, K]
    mask = np.where(doc_mask, 0.0, NEG_INF).astype(z_s.dtype)
    scores = ad.add_constant(scores, np.repeat(mask, n_heads, axis=0)[:, None, :])
    alpha = ad.softmax(scores, axis=-1)
    pooled = ad.reshape(ad.matmul(alpha, v), (B, d))
    g = ad.matmul(pooled, w_r)
    return g, alpha.data.reshape(B, n_heads, K)


def classify(t: Tensor, g: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Logits over ``(Factual, NonFactual)`` from ``[t; g]``."""
    return ad.add(ad.matmul(ad.concat([t, g], axis=-1), weight), bias)


# -- encoders ----------------------------------------------------------------


class Encoders:
    """Backbone plus both adapter sets, a pooling head and task heads."""

    def __init__(self, config: ModelConfig, heads: Iterable[str] = ("sentence",)):
        self.config = config
        self.heads = tuple(heads)
        self.dtype = np.dtype(config.dtype)
        self.params = ParamStore()
        self._init_backbone()
        self._init_adapters()
        self._init_heads()

    # parameters

    def _init_backbone(self) -> None:
        c = self.config.backbone
        rng = np.random.default_rng(c.seed)
        build = structured_backbone if c.init == "structured" else random_backbone
        for name, w in build(c, rng).items():
            self.params.add(f"backbone.{name}", w.astype(self.dtype), False)

    def _adapter(self, prefix: str, rng) -> None:
        d, m, s, dt = self.d, self.config.adapter_size, self.config.adapter_init, self.dtype
        self.params.add(f"{prefix}.ln.g", np.ones(d, dt), True)
        self.params.add(f"{prefix}.ln.b", np.zeros(d, dt), True)
        self.params.add(f"{prefix}.W_p", (rng.standard_normal((d, m)) * s).astype(dt), True)
        self.params.add(f"{prefix}.W_o", (rng.standard_normal((m, d)) * s).astype(dt), True)

    def _init_adapters(self) -> None:
        c = self.config
        d, m, s, dt = self.d, c.adapter_size, c.adapter_init, self.dtype
        rng = np.random.default_rng([c.seed, 1])
        for l in range(c.backbone.n_layers):
            self._adapter(f"text.L{l}.pre", rng)
            self._adapter(f"text.L{l}.post", rng)
        for l in range(c.backbone.n_layers):
            pre = f"graph.L{l}.struct"
            self.params.add(f"{pre}.ln.g", np.ones(d, dt), True)
            self.params.add(f"{pre}.ln.b", np.zeros(d, dt), True)
            for r in ("forward", "reverse", "self"):
                self.params.add(f"{pre}.W_{r}", (rng.standard_normal((d, m)) * s).astype(dt), True)
            self.params.add(f"{pre}.W_e", (rng.standard_normal((m, d)) * s).astype(dt), True)
            self._adapter(f"graph.L{l}.post", rng)

    def _init_heads(self) -> None:
        c = self.config
        d, dt = self.d, self.dtype
        rng = np.random.default_rng([c.seed, 2])
        std = 1 / math.sqrt(d)
        if "sentence" in self.heads:
            wq = (rng.standard_normal((d, d)) * std).astype(dt)
            self.params.add("pool.W_q", wq, True)
            self.params.add("pool.W_k", wq.copy(), True)
            self.params.add("pool.W_r", (rng.standard_normal((d, d)) * std).astype(dt), True)
            self.params.add("cls.W", (rng.standard_normal((2 * d, 2)) * 0.02).astype(dt), True)
            self.params.add("cls.b", np.zeros(2, dt), True)
        if "edge" in self.heads:
            self.params.add("edge_cls.W", (rng.standard_normal((4 * d, 2)) * 0.02).astype(dt), True)
            self.params.add("edge_cls.b", np.zeros(2, dt), True)

    @property
    def d(self) -> int:
        return self.config.backbone.d_model

    def P(self, name: str) -> Tensor:
        return self.params[name]

    # backbone pieces

    def embed(self, ids: np.ndarray, segments: np.ndarray, positions: bool) -> Tensor:
        B, T = ids.shape
        if positions and T > self.config.backbone.max_len:
            raise OverLength(f"sequence of {T} tokens exceeds max_len")
        flat = ad.gather_rows(self.P("backbone.tok_emb"), ids.reshape(-1))
        x = ad.add(flat, ad.gather_rows(self.P("backbone.seg_emb"), segments.reshape(-1)))
        if positions:
            pos = np.tile(np.arange(T), B)
            x = ad.add(x, ad.gather_rows(self.P("backbone.pos_emb"), pos))
        x = ad.layer_norm(x, self.P("backbone.emb_ln.g"), self.P("backbone.emb_ln.b"), eps=self.config.backbone.ln_eps)
        return ad.reshape(x, (B, T, self.d))

    def attention(self, l: int, h: Tensor, valid: np.ndarray) -> Tensor:
        B, T, d = h.shape
        H = self.config.backbone.n_heads
        dh = d // H
        pre = f"backbone.L{l}.attn"

        def heads(x: Tensor) -> Tensor:
            x = ad.reshape(x, (B, T, H, dh))
            return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B * H, T, dh))

        q = heads(ad.add(ad.matmul(h, self.P(f"{pre}.Wq")), self.P(f"{pre}.bq")))
        k = heads(ad.add(ad.matmul(h, self.P(f"{pre}.Wk")), self.P(f"{pre}.bk")))
        v = heads(ad.add(ad.matmul(h, self.P(f"{pre}.Wv")), self.P(f"{pre}.bv")))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        mask = np.where(valid, 0.0, NEG_INF).astype(self.dtype)
        scores = ad.add_constant(scores, np.repeat(mask, H, axis=0)[:, None, :])
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
        ctx = ad.reshape(ad.transpose(ad.reshape(ctx, (B, H, T, dh)), (0, 2, 1, 3)), (B, T, d))
        return ad.add(ad.matmul(ctx, self.P(f"{pre}.Wo")), self.P(f"{pre}.bo"))

    def ffn(self, l: int, h: Tensor) -> Tensor:
        pre = f"backbone.L{l}.ffn"
        x = ad.gelu(ad.add(ad.matmul(h, self.P(f"{pre}.W1")), self.P(f"{pre}.b1")))
        return ad.add(ad.matmul(x, self.P(f"{pre}.W2")), self.P(f"{pre}.b2"))

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.P(f"{name}.g"), self.P(f"{name}.b"), eps=self.config.backbone.ln_eps)

    def run_layers(
        self,
        h: Tensor,
        valid: np.ndarray,
        before_ffn: Callable[[int, Tensor], Tensor] | None = None,
        after_ffn: Callable[[int, Tensor], Tensor] | None = None,
    ) -> Tensor:
        for l in range(self.config.backbone.n_layers):
            a = self._ln(f"backbone.L{l}.ln1", ad.add(h, self.attention(l, h, valid)))
            if before_ffn is not None:
                a = before_ffn(l, a)
            h = self._ln(f"backbone.L{l}.ln2", ad.add(a, self.ffn(l, a)))
            if after_ffn is not None:
                h = after_ffn(l, h)
        return h

    def adapter(self, prefix: str, h: Tensor) -> Tensor:
        """``h + W_o relu(W_p LN(h))`` on the last axis."""
        shape = h.shape
        flat = ad.reshape(h, (-1, shape[-1]))
        z = ad.layer_norm(flat, self.P(f"{prefix}.ln.g"), self.P(f"{prefix}.ln.b"), eps=self.config.backbone.ln_eps)
        z = ad.matmul(ad.relu(ad.matmul(z, self.P(f"{prefix}.W_p"))), self.P(f"{prefix}.W_o"))
        return ad.add(h, ad.reshape(z, shape))

    def structural_adapter(self, l: int, h: Tensor, batch: GraphBatch) -> Tensor:
        """``h + W_e relu(RGCN(LN(h)))`` over the token-graph edges of ``batch``."""
        pre = f"graph.L{l}.struct"
        G, T, d = h.shape
        flat = ad.reshape(h, (G * T, d))
        g = rgcn_conv(
            flat,
            batch.src,
            batch.dst,
            batch.etype,
            [self.P(f"{pre}.W_{r}") for r in ("forward", "reverse", "self")],
            self.P(f"{pre}.ln.g"),
            self.P(f"{pre}.ln.b"),
            eps=self.config.backbone.ln_eps,
        )
        z = ad.matmul(ad.relu(g), self.P(f"{pre}.W_e"))
        return ad.add(h, ad.reshape(z, (G, T, d)))

    # encoders

    def backbone_text(self, batch: TextBatch) -> Tensor:
        """The adapter-free backbone on a text batch (reference for residual checks)."""
        return self.run_layers(self.embed(batch.ids, batch.segments, True), batch.valid)

    def backbone_graph(self, batch: GraphBatch) -> Tensor:
        return self.run_layers(self.embed(batch.ids, batch.segments, False), batch.valid)

    def text_encode(self, batch: TextBatch) -> tuple[Tensor, Tensor]:
        """Per-token states ``[B, T, d]`` and the ``[CLS]`` vector ``t [B, d]``."""
        h = self.embed(batch.ids, batch.segments, True)
        h = self.run_layers(
            h,
            batch.valid,
            before_ffn=lambda l, x: self.adapter(f"text.L{l}.pre", x),
            after_ffn=lambda l, x: self.adapter(f"text.L{l}.post", x),
        )
        return h, h[:, 0, :]

    def graph_states(self, batch: GraphBatch) -> Tensor:
        h = self.embed(batch.ids, batch.segments, False)
        return self.run_layers(
            h,
            batch.valid,
            before_ffn=lambda l, x: self.structural_adapter(l, x, batch),
            after_ffn=lambda l, x: self.adapter(f"graph.L{l}.post", x),
        )

    def graph_encode(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        """Per-node states ``[G, T, d]`` and mean-pooled graph vectors ``[G, d]``."""
        h = self.graph_states(batch)
        G, T, d = h.shape
        weights = batch.valid / batch.valid.sum(axis=1, keepdims=True)
        pooled = ad.matmul(Tensor(weights[:, None, :].astype(self.dtype)), h)
        return h, ad.reshape(pooled, (G, d))

    def pool(self, z_s: Tensor, z_docs: Tensor, doc_mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        return attend_pool(
            z_s, z_docs, doc_mask, self.P("pool.W_q"), self.P("pool.W_k"), self.P("pool.W_r"), self.config.pool_heads
        )

    def classify(self, t: Tensor, g: Tensor) -> Tensor:
        return classify(t, g, self.P("cls.W"), self.P("cls.b"))

    def zero_adapter_outputs(self) -> None:
        """Zero every ``W_o`` and ``W_e`` so all adapters reduce to the identity."""
        for name, t in self.params.items():
            if name.endswith(".W_o") or name.endswith(".W_e"):
                t.data = np.zeros_like(t.data)


# -- masked node pretraining -------------------------------------------------


def masked_node_loss(
    enc: Encoders, graphs: Sequence[TokenGraph], mask_rate: float, rng: np.random.Generator
) -> tuple[Tensor, int]:
    """Cross-entropy of recovering randomly masked node tokens.

    Each node is masked independently with probability ``mask_rate``;
    predictions use the frozen token embedding matrix as output layer. With no
    masked node the loss is 0.
    """
    batch = make_graph_batch(graphs)
    chosen = (rng.random(batch.ids.shape) < mask_rate) & batch.valid
    if not chosen.any():
        return Tensor(np.zeros((), dtype=enc.dtype)), 0
    targets = batch.ids[chosen]
    masked = batch.ids.copy()
    masked[chosen] = MASK
    batch = GraphBatch(masked, batch.segments, batch.valid, batch.src, batch.dst, batch.etype, batch.sizes)
    h = enc.graph_states(batch)
    G, T, d = h.shape
    rows = np.flatnonzero(chosen.reshape(-1))
    picked = ad.gather_rows(ad.reshape(h, (G * T, d)), rows)
    emb = enc.P("backbone.tok_emb")
    logits = ad.matmul(picked, ad.transpose(emb, (1, 0)))
    return ad.cross_entropy(logits, targets), len(rows)


def masked_node_pretrain_step(
    enc: Encoders,
    optimizer: ad.Adam,
    graphs: Sequence[TokenGraph],
    mask_rate: float = 0.15,
    seed: int = 0,
) -> float:
    """One optimizer step on the masked-node objective; updates structural adapters only."""
    structural = [t for n, t in enc.params.items() if ".struct." in n]
    for t in enc.params.values():
        t.grad = None
    loss, _ = masked_node_loss(enc, graphs, mask_rate, np.random.default_rng(seed))
    ad.backward(loss)
    keep = {id(t) for t in structural}
    for t in enc.params.values():
        if id(t) not in keep:
            t.grad = None
    optimizer.step()
    return float(loss.data)
