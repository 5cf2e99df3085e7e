"""Frozen backbone weights.

The backbone is a post-LN transformer encoder whose weights never train. Two
initializations are provided.

``random``: i.i.d. Gaussian weights with tied query/key projections.

``structured``: a copy-aware backbone with the same shapes. It stands in for
the skills a pretrained encoder brings to factuality checking: knowing a
token's neighbours and noticing whether a phrase of the second segment also
occurs in the first. The residual stream is split into named subspaces::

    T  token content        P  previous token       N  next token
    K  trigram hash         POS position            SEG segment
    ONE constant            F  novelty flags

Layer 0 has two positional heads that copy the content of positions i-1 and
i+1 into P and N; its feed-forward block is a random centered hash of
``[P; T; N]`` written into K. Layer 1 has match heads over K (trigrams) and
T (unigrams). Each compares its code with every other position and
penalizes positions of its own segment, so a summary token attends to a
document copy when one exists and to itself otherwise; the value carries
the segment sign, which becomes a novelty flag (+ novel, - copied). Layer 2
copies the trigram flags of both neighbours and averages the flags over the
non-boundary tokens of the second segment. Remaining blocks are weak random feed-forward layers and
silent heads.

All embedding pieces sum to zero over the coordinates, so layer norm scales
identical content identically wherever it appears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .canon import CLS, SEP

__all__ = ["random_backbone", "structured_backbone", "Layout", "structured_layout"]

# flag slots inside F
FLAG_TRIGRAM, FLAG_UNIGRAM, FLAG_PREV, FLAG_NEXT, FLAG_POOL_TRIGRAM, FLAG_POOL_UNIGRAM, FLAG_BOUNDARY = range(7)
N_FLAGS = 7
SEG_DIMS = 4

# score targets, in logits
POSITION_GAP = 16.0  # intended neighbour vs best other position
MATCH_SCORE = 100.0  # self score of a code
TRIGRAM_SINK = 0.85  # a code similarity above this counts as a copy
UNIGRAM_SINK = 0.7
POOL_GAP = 20.0
FLAG_SIZE = 2.0


def _gelu(x):
    # the tanh form used by the network
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _layer(d: int, d_ff: int) -> dict[str, np.ndarray]:
    z = np.zeros
    return {
        "attn.Wq": z((d, d)), "attn.bq": z(d), "attn.Wk": z((d, d)), "attn.bk": z(d),
        "attn.Wv": z((d, d)), "attn.bv": z(d), "attn.Wo": z((d, d)), "attn.bo": z(d),
        "ln1.g": np.ones(d), "ln1.b": z(d),
        "ffn.W1": z((d, d_ff)), "ffn.b1": z(d_ff), "ffn.W2": z((d_ff, d)), "ffn.b2": z(d),
        "ln2.g": np.ones(d), "ln2.b": z(d),
    }


def _assemble(emb: dict[str, np.ndarray], layers: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    d = emb["tok_emb"].shape[1]
    out = dict(emb)
    out["emb_ln.g"] = np.ones(d)
    out["emb_ln.b"] = np.zeros(d)
    for l, layer in enumerate(layers):
        out.update({f"L{l}.{k}": v for k, v in layer.items()})
    return out


def random_backbone(c, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, ff = c.d_model, c.d_ff
    dh = d // c.n_heads
    emb = {
        "tok_emb": rng.standard_normal((c.vocab_size, d)),
        "pos_emb": rng.standard_normal((c.max_len, d)) * c.pos_scale,
        "seg_emb": rng.standard_normal((2, d)) * c.seg_scale,
    }
    layers = []
    for _ in range(c.n_layers):
        layer = _layer(d, ff)
        # scores of a token with itself come out around qk_scale * sqrt(dh)
        wq = rng.standard_normal((d, d)) * math.sqrt(c.qk_scale) / math.sqrt(d) * dh**0.25
        layer["attn.Wq"], layer["attn.Wk"] = wq, wq.copy()
        layer["attn.Wv"] = rng.standard_normal((d, d)) / math.sqrt(d)
        layer["attn.Wo"] = rng.standard_normal((d, d)) / math.sqrt(d)
        layer["ffn.W1"] = rng.standard_normal((d, ff)) / math.sqrt(d)
        layer["ffn.W2"] = rng.standard_normal((ff, d)) / math.sqrt(ff)
        layers.append(layer)
    return _assemble(emb, layers)


# -- structured ---------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Coordinate ranges of the residual-stream subspaces."""

    T: slice
    P: slice
    N: slice
    K: slice
    POS: slice
    SEG: slice
    ONE: int
    F: slice

    def flag(self, i: int) -> int:
        return self.F.start + i


def structured_layout(c) -> Layout:
    sizes = [c.content_dims] * 3 + [c.hash_dims, 2 * c.pos_freqs + 1, SEG_DIMS, 1, N_FLAGS]
    if sum(sizes) > c.d_model:
        raise ValueError(f"structured layout needs d_model >= {sum(sizes)}, got {c.d_model}")
    dh = c.d_model // c.n_heads
    if dh < max(c.hash_dims, c.content_dims) + SEG_DIMS or dh < 2 * c.pos_freqs:
        raise ValueError(f"head size {dh} too small for the structured layout")
    if c.n_layers < 3 or c.n_heads < 3:
        raise ValueError("structured init needs at least 3 layers and 3 heads")
    edges = np.cumsum([0] + sizes)
    s = [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    return Layout(T=s[0], P=s[1], N=s[2], K=s[3], POS=s[4], SEG=s[5], ONE=int(edges[6]), F=s[7])


def _zero_sum_basis(n: int, rng: np.random.Generator) -> np.ndarray:
    """``[n + 1, n]`` orthonormal columns orthogonal to the all-ones vector."""
    a = rng.standard_normal((n + 1, n))
    a -= a.mean(axis=0, keepdims=True)
    q, _ = np.linalg.qr(a)
    return q


def _zero_sum_unit(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(n)
    v -= v.mean()
    return v / np.linalg.norm(v)


def position_frequencies(n: int, max_len: int, trials: int = 2000) -> tuple[np.ndarray, float]:
    """Frequencies whose summed cosines peak sharply at lag 0 over ``max_len`` lags.

    Seeded random search; returns the frequencies and the worst normalized
    side lobe.
    """
    rng = np.random.default_rng(0)
    lags = np.arange(1, max(max_len, 2))
    best, best_w = np.inf, None
    for _ in range(trials):
        w = np.sort(rng.uniform(0.3, math.pi - 0.1, n))
        side = float(np.max(np.cos(np.outer(lags, w)).sum(axis=1)) / n)
        if side < best:
            best, best_w = side, w
    return best_w, best


class _Energy:
    """Squared norm of each subspace in the residual stream, followed through layer norms."""

    def __init__(self, d: int, **parts: float):
        self.d = d
        self.parts = dict(parts)

    def add(self, **parts: float) -> None:
        for k, v in parts.items():
            self.parts[k] = self.parts.get(k, 0.0) + v

    def norm(self) -> None:
        total = sum(self.parts.values())
        self.parts = {k: v * self.d / total for k, v in self.parts.items()}

    def __getitem__(self, key: str) -> float:
        return self.parts.get(key, 0.0)


def structured_backbone(c, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, ff, H = c.d_model, c.d_ff, c.n_heads
    dh = d // H
    lay = structured_layout(c)
    nf = c.pos_freqs
    root = math.sqrt(dh)

    # embeddings: unit content, positions and segment of fixed energy
    tok = np.zeros((c.vocab_size, d))
    codes = rng.standard_normal((c.vocab_size, c.content_dims))
    codes -= codes.mean(axis=1, keepdims=True)
    codes /= np.linalg.norm(codes, axis=1, keepdims=True)
    # sentence boundaries look alike, so a copied sentence keeps its edge trigrams
    boundary = [CLS, SEP, *c.boundary_ids]
    codes[boundary] = codes[CLS]
    tok[:, lay.T] = 2.0 * codes
    tok[boundary, lay.flag(FLAG_BOUNDARY)] = 1.0
    tok[:, lay.ONE] = 1.0
    freqs, side = position_frequencies(nf, c.max_len)
    angles = np.arange(c.max_len)[:, None] * freqs[None, :]
    raw = np.concatenate([np.sin(angles), np.cos(angles)], axis=1) * math.sqrt(4.0 / nf)
    pos_basis = _zero_sum_basis(2 * nf, rng)
    pos = np.zeros((c.max_len, d))
    pos[:, lay.POS] = raw @ pos_basis.T
    u = _zero_sum_unit(SEG_DIMS, rng)
    seg = np.zeros((2, d))
    seg[0, lay.SEG] = u
    seg[1, lay.SEG] = -u
    # segment 1 (summary, graph under test) carries -u; flags read it with a minus sign
    e = _Energy(d, T=4.0, POS=4.0, SEG=1.0, ONE=1.0)
    e.norm()

    def shift(delta: int) -> np.ndarray:
        """Maps raw position features of i to those of i + delta."""
        r = np.zeros((2 * nf, 2 * nf))
        cw, sw = np.cos(freqs * delta), np.sin(freqs * delta)
        idx = np.arange(nf)
        # sin(w(i+δ)) = sin(wi)cos(wδ) + cos(wi)sin(wδ); cos(w(i+δ)) = cos(wi)cos(wδ) - sin(wi)sin(wδ)
        r[idx, idx], r[idx + nf, idx] = cw, sw
        r[idx, idx + nf], r[idx + nf, idx + nf] = -sw, cw
        return r

    def positional_head(layer, h: int, delta: int, energy: _Energy, src: slice, dst: slice | int):
        """Head ``h`` attends from i to i + delta and copies ``src`` into ``dst``."""
        lam = math.sqrt(POSITION_GAP * root / (energy["POS"] * (1.0 - side)))
        cols = slice(h * dh, h * dh + 2 * nf)
        layer["attn.Wq"][lay.POS, cols] = lam * pos_basis @ shift(delta)
        layer["attn.Wk"][lay.POS, cols] = lam * pos_basis
        width = (src.stop - src.start)
        layer["attn.Wv"][src, h * dh : h * dh + width] = np.eye(width)
        if isinstance(dst, slice):
            layer["attn.Wo"][h * dh : h * dh + width, dst] = np.eye(width)
        else:
            layer["attn.Wo"][h * dh, dst] = 1.0

    def match_head(layer, h: int, code: slice, code_energy: float, energy: _Energy, sink: float, flag: int):
        """Head ``h`` compares ``code`` across positions, preferring the other segment.

        Exact copies in the other segment score S + G, the position itself
        S - G and a code of relative similarity rho in the other segment
        rho * S + G, so the head falls back to itself below ``sink``.
        """
        width = code.stop - code.start
        lam = math.sqrt(MATCH_SCORE * root / code_energy)
        gap = (1.0 - sink) * MATCH_SCORE / 2.0
        gamma = gap * root / energy["SEG"]
        base = h * dh
        layer["attn.Wq"][code, base : base + width] = lam * np.eye(width)
        layer["attn.Wk"][code, base : base + width] = lam * np.eye(width)
        layer["attn.Wq"][lay.SEG, base + width : base + width + SEG_DIMS] = -gamma * np.eye(SEG_DIMS)
        layer["attn.Wk"][lay.SEG, base + width : base + width + SEG_DIMS] = np.eye(SEG_DIMS)
        # value: minus the segment sign, so novel summary tokens get +FLAG_SIZE
        layer["attn.Wv"][lay.SEG, base] = -u * FLAG_SIZE / math.sqrt(energy["SEG"])
        layer["attn.Wo"][base, lay.flag(flag)] = 1.0

    def weak_ffn(layer) -> None:
        layer["ffn.W1"] = rng.standard_normal((d, ff)) / math.sqrt(d)
        layer["ffn.W2"] = rng.standard_normal((ff, d)) * c.ffn_scale / math.sqrt(ff)

    layers = [_layer(d, ff) for _ in range(c.n_layers)]

    # layer 0: neighbours, then the trigram hash
    l0 = layers[0]
    positional_head(l0, 0, -1, e, lay.T, lay.P)
    positional_head(l0, 1, +1, e, lay.T, lay.N)
    e.add(P=e["T"], N=e["T"])
    e.norm()
    content = e["T"] + e["P"] + e["N"]
    l0["ffn.W1"][lay.T] = rng.standard_normal((c.content_dims, ff)) / math.sqrt(content)
    l0["ffn.W1"][lay.P] = rng.standard_normal((c.content_dims, ff)) / math.sqrt(content)
    l0["ffn.W1"][lay.N] = rng.standard_normal((c.content_dims, ff)) / math.sqrt(content)
    l0["ffn.b1"][:] = -c.hash_threshold
    grid = np.linspace(-10.0, 10.0, 40001)
    density = np.exp(-grid**2 / 2) / math.sqrt(2 * math.pi)
    act = _gelu(grid - c.hash_threshold)
    mean_act = float(np.trapezoid(act * density, grid))
    var_act = float(np.trapezoid(act**2 * density, grid)) - mean_act**2
    w2 = rng.standard_normal((ff, c.hash_dims))
    w2 -= w2.mean(axis=1, keepdims=True)
    target = e["T"]
    w2 *= math.sqrt(target / (ff * var_act * (c.hash_dims - 1)))
    l0["ffn.W2"][:, lay.K] = w2
    l0["ffn.b2"][lay.K] = -mean_act * w2.sum(axis=0)
    e.add(K=target)
    e.norm()

    # layer 1: trigram and unigram novelty
    l1 = layers[1]
    match_head(l1, 0, lay.K, e["K"], e, TRIGRAM_SINK, FLAG_TRIGRAM)
    match_head(l1, 1, lay.T, e["T"], e, UNIGRAM_SINK, FLAG_UNIGRAM)
    e.add(F=2 * FLAG_SIZE**2)
    e.norm()
    weak_ffn(l1)
    e.add(FFN=c.ffn_scale**2 * e.d)
    e.norm()

    # layer 2: neighbour flags and the summary-wide average
    l2 = layers[2]
    trigram = lay.flag(FLAG_TRIGRAM)
    positional_head(l2, 0, -1, e, slice(trigram, trigram + 1), lay.flag(FLAG_PREV))
    positional_head(l2, 1, +1, e, slice(trigram, trigram + 1), lay.flag(FLAG_NEXT))
    base = 2 * dh
    # query: the constant coordinate; key: the segment, so every position averages segment 1
    beta = POOL_GAP * root / (2.0 * math.sqrt(e["ONE"] * e["SEG"]))
    l2["attn.Wq"][lay.ONE, base : base + SEG_DIMS] = -beta * u
    l2["attn.Wk"][lay.SEG, base : base + SEG_DIMS] = np.eye(SEG_DIMS)
    # boundary tokens are left out of the average
    l2["attn.Wq"][lay.ONE, base + SEG_DIMS] = -POOL_GAP * root / math.sqrt(e["ONE"] * e["ONE"])
    l2["attn.Wk"][lay.flag(FLAG_BOUNDARY), base + SEG_DIMS] = 1.0
    l2["attn.Wv"][lay.flag(FLAG_TRIGRAM), base] = 1.0
    l2["attn.Wv"][lay.flag(FLAG_UNIGRAM), base + 1] = 1.0
    l2["attn.Wo"][base, lay.flag(FLAG_POOL_TRIGRAM)] = 1.0
    l2["attn.Wo"][base + 1, lay.flag(FLAG_POOL_UNIGRAM)] = 1.0
    weak_ffn(l2)
    for layer in layers[3:]:
        weak_ffn(layer)

    emb = {"tok_emb": tok, "pos_emb": pos, "seg_emb": seg}
    return _assemble(emb, layers)
