"""Turn AMR graphs into token graphs the encoder can consume.

Two steps: every labeled edge ``(u, r, v)`` becomes a fresh relation node
``r`` with unlabeled edges ``u -> r -> v`` (the bipartite graph), then every
bipartite node is split into its subword tokens and each bipartite edge is
expanded to the full cross product of tokens. Token-graph edges carry one
of three types: forward, reverse and self.

The subword vocabulary is a small byte-pair-merge model trained here; there is
no external pretrained vocabulary.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .amr import AmrGraph, Constant

__all__ = [
    "FORWARD",
    "REVERSE",
    "SELF",
    "EDGE_TYPES",
    "PAD",
    "UNK",
    "MASK",
    "CLS",
    "SEP",
    "RESERVED_TOKENS",
    "BipartiteNode",
    "BipartiteGraph",
    "TokenGraph",
    "SubwordVocab",
    "EmptyCorpus",
    "VocabTooSmall",
    "to_bipartite",
    "build_vocab",
    "tokenize",
    "detokenize",
    "to_token_graph",
    "amr_to_token_graph",
    "concat_token_graphs",
    "normalize_label",
    "split_words",
    "label_corpus",
]

FORWARD, REVERSE, SELF = 0, 1, 2
EDGE_TYPES = ("forward", "reverse", "self")

# reserved ids are fixed; ordinary tokens start at len(RESERVED_TOKENS)
PAD, UNK, MASK, CLS, SEP = 0, 1, 2, 3, 4
RESERVED_TOKENS = ("[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]")

DEFAULT_MAX_NODES = 512

_WORD_RE = re.compile(r"\w+(?:[-']\w+)*|[^\w\s]")


class EmptyCorpus(ValueError):
    pass


class VocabTooSmall(ValueError):
    pass


# -- bipartite graph ---------------------------------------------------------


class BipartiteNode(NamedTuple):
    id: str
    label: str
    kind: str  # concept | relation | constant


@dataclass(frozen=True)
class BipartiteGraph:
    nodes: tuple[BipartiteNode, ...]
    edges: tuple[tuple[str, str], ...]
    root: str | None = None

    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}


def to_bipartite(graph: AmrGraph) -> BipartiteGraph:
    """Replace every labeled edge with a relation node and two plain edges.

    Relation node ids are ``#<edge index>``; constant node ids are
    ``@<edge index>`` (see :meth:`AmrGraph.constant_node_id`). Repeated
    relation labels give distinct nodes.
    """
    nodes = [BipartiteNode(v, c, "concept") for v, c in graph.instances.items()]
    edges = []
    for i, (source, rel, target) in enumerate(graph.edges):
        rel_id = f"#{i}"
        nodes.append(BipartiteNode(rel_id, rel, "relation"))
        if isinstance(target, Constant):
            target_id = graph.constant_node_id(i)
            nodes.append(BipartiteNode(target_id, target.value, "constant"))
        else:
            target_id = target
        edges.append((source, rel_id))
        edges.append((rel_id, target_id))
    return BipartiteGraph(tuple(nodes), tuple(edges), root=graph.root)


# -- vocabulary --------------------------------------------------------------


@dataclass
class SubwordVocab:
    """Ordered token list; the id of a token is its position.

    Ids 0-4 are ``[PAD] [UNK] [MASK] [CLS] [SEP]``.
    """

    tokens: list[str]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.max_token_len = max(len(t) for t in self.tokens[len(RESERVED_TOKENS) :] or [""])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def save(self, path: str | Path) -> None:
        """Write the vocabulary file.

        Header lines start with ``#``; every other line holds one JSON-encoded
        token and the n-th token line has id n.
        """
        lines = ["# factgraph subword vocabulary v1"]
        lines.append("# params: " + json.dumps(self.params, sort_keys=True))
        lines.append(f"# size: {len(self.tokens)}")
        lines.extend(json.dumps(t) for t in self.tokens)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SubwordVocab":
        tokens, params = [], {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#"):
                if line.startswith("# params: "):
                    params = json.loads(line[len("# params: ") :])
                continue
            if line:
                tokens.append(json.loads(line))
        return cls(tokens, params)


def build_vocab(corpus: Iterable[str], max_size: int = 8192, strict: bool = True) -> SubwordVocab:
    """Train a byte-pair-merge vocabulary.

    Strings are split on whitespace and merges never cross word boundaries.
    All characters of the corpus are always included. Each round merges the
    most frequent adjacent pair; ties go to the lexicographically smallest
    pair. Stops at ``max_size`` tokens or when no pair remains.

    If ``max_size`` cannot hold the reserved tokens plus the alphabet,
    ``strict`` raises :class:`VocabTooSmall`; otherwise a character-only
    vocabulary (larger than ``max_size``) is returned.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")

    alphabet = sorted({ch for text in corpus for ch in text})
    words = Counter(w for text in corpus for w in text.split())
    params = {"max_size": max_size, "corpus_size": len(corpus), "algorithm": "bpe-greedy"}

    base = list(RESERVED_TOKENS) + alphabet
    if len(base) > max_size:
        if strict:
            raise VocabTooSmall(
                f"max_size={max_size} < {len(base)} reserved tokens plus alphabet"
            )
        return SubwordVocab(base, params)

    tokens = list(base)
    known = set(tokens)
    segmented = {tuple(w): n for w, n in words.items()}
    while len(tokens) < max_size:
        pairs: Counter = Counter()
        for symbols, n in segmented.items():
            for a, b in zip(symbols, symbols[1:]):
                pairs[(a, b)] += n
        if not pairs:
            break
        best_count = max(pairs.values())
        a, b = min(p for p, c in pairs.items() if c == best_count)
        merged = a + b
        if merged not in known:
            tokens.append(merged)
            known.add(merged)
        updated = {}
        for symbols, n in segmented.items():
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            key = tuple(out)
            updated[key] = updated.get(key, 0) + n
        segmented = updated
    return SubwordVocab(tokens, params)


def tokenize(vocab: SubwordVocab, text: str) -> list[int]:
    """Greedy longest-match segmentation, left to right.

    Characters not covered by the vocabulary become ``[UNK]``.
    """
    ids = []
    i, n = 0, len(text)
    longest = vocab.max_token_len
    while i < n:
        for j in range(min(n, i + longest), i, -1):
            tid = vocab.index.get(text[i:j])
            if tid is not None and tid >= len(RESERVED_TOKENS):
                ids.append(tid)
                i = j
                break
        else:
            ids.append(UNK)
            i += 1
    return ids


def detokenize(vocab: SubwordVocab, ids: Sequence[int]) -> str:
    return "".join(vocab.tokens[i] for i in ids)


def normalize_label(label: str) -> str:
    """Lowercase a node label; sense suffixes such as ``-01`` are kept."""
    return label.lower()


def split_words(text: str) -> list[tuple[str, int, int]]:
    """Word tokens of a sentence with their ``[start, end)`` character offsets."""
    return [(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


def label_corpus(graphs: Iterable[AmrGraph]) -> list[str]:
    """Normalized node and relation labels, for vocabulary training."""
    out = []
    for g in graphs:
        out.extend(normalize_label(n.label) for n in to_bipartite(g).nodes)
    return out


# -- token graph -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TokenGraph:
    """Subword-level graph.

    ``token_ids[i]`` is the vocabulary id of node ``i`` and ``origin[i]`` the
    bipartite node it came from. Edges are parallel arrays ``src``, ``dst``,
    ``etype`` with types :data:`FORWARD`, :data:`REVERSE`, :data:`SELF`.
    """

    token_ids: np.ndarray
    tokens: tuple[str, ...]
    origin: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def nodes(self) -> list[tuple[int, str, str]]:
        return list(zip(self.token_ids.tolist(), self.tokens, self.origin))

    @property
    def edges(self) -> list[tuple[int, int, str]]:
        return [
            (int(s), int(d), EDGE_TYPES[t])
            for s, d, t in zip(self.src, self.dst, self.etype)
        ]

    def edge_counts(self) -> dict[str, int]:
        counts = np.bincount(self.etype, minlength=3)
        return {name: int(counts[i]) for i, name in enumerate(EDGE_TYPES)}

    def positions_of(self, origin_id: str) -> list[int]:
        return [i for i, o in enumerate(self.origin) if o == origin_id]

    def permuted(self, order: Sequence[int]) -> "TokenGraph":
        """Same graph with node ``order[i]`` moved to position ``i``."""
        order = np.asarray(order)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        return TokenGraph(
            self.token_ids[order],
            tuple(self.tokens[i] for i in order),
            tuple(self.origin[i] for i in order),
            inverse[self.src],
            inverse[self.dst],
            self.etype.copy(),
        )


def _bfs_keep(bg: BipartiteGraph, sizes: dict[str, int], max_nodes: int) -> set[str]:
    neighbours: dict[str, list[str]] = {n.id: [] for n in bg.nodes}
    for a, b in bg.edges:
        neighbours[a].append(b)
        neighbours[b].append(a)
    start = bg.root if bg.root in neighbours else bg.nodes[0].id
    keep: set[str] = set()
    used = 0
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if used + sizes[node] > max_nodes:
            continue
        keep.add(node)
        used += sizes[node]
        for nb in neighbours[node]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return keep


def to_token_graph(
    bg: BipartiteGraph, vocab: SubwordVocab, max_nodes: int = DEFAULT_MAX_NODES
) -> TokenGraph:
    """Expand a bipartite graph into its token graph.

    For each bipartite edge ``(u_b, v_b)`` every token of ``u_b`` gets a
    forward edge to every token of ``v_b`` and the matching reverse edge; every
    token gets one self edge. Graphs above ``max_nodes`` tokens are cut
    breadth-first from the root, with a warning.
    """
    pieces = {n.id: tokenize(vocab, normalize_label(n.label)) for n in bg.nodes}
    keep = None
    total = sum(len(p) for p in pieces.values())
    if total > max_nodes:
        keep = _bfs_keep(bg, {k: len(v) for k, v in pieces.items()}, max_nodes)
        warnings.warn(
            f"token graph has {total} nodes, truncated to {max_nodes} breadth-first",
            stacklevel=2,
        )

    token_ids: list[int] = []
    origin: list[str] = []
    span: dict[str, range] = {}
    for n in bg.nodes:
        if keep is not None and n.id not in keep:
            continue
        start = len(token_ids)
        token_ids.extend(pieces[n.id])
        origin.extend([n.id] * len(pieces[n.id]))
        span[n.id] = range(start, len(token_ids))

    src, dst, etype = [], [], []
    for a, b in bg.edges:
        if a not in span or b not in span:
            continue
        for i in span[a]:
            for j in span[b]:
                src.append(i)
                dst.append(j)
                etype.append(FORWARD)
    n_fwd = len(src)
    src, dst = src + dst[:n_fwd], dst + src[:n_fwd]
    etype += [REVERSE] * n_fwd
    n = len(token_ids)
    src += list(range(n))
    dst += list(range(n))
    etype += [SELF] * n

    return TokenGraph(
        np.asarray(token_ids, dtype=np.int64),
        tuple(vocab.tokens[t] for t in token_ids),
        tuple(origin),
        np.asarray(src, dtype=np.int64),
        np.asarray(dst, dtype=np.int64),
        np.asarray(etype, dtype=np.int64),
    )


def amr_to_token_graph(
    graph: AmrGraph, vocab: SubwordVocab, max_nodes: int = DEFAULT_MAX_NODES
) -> TokenGraph:
    return to_token_graph(to_bipartite(graph), vocab, max_nodes)


def concat_token_graphs(graphs: Sequence[TokenGraph], prefixes: Sequence[str]) -> TokenGraph:
    """Disjoint union; origins are prefixed to keep them distinct, no cross edges."""
    offset = 0
    ids, toks, origin, src, dst, etype = [], [], [], [], [], []
    for g, prefix in zip(graphs, prefixes):
        ids.append(g.token_ids)
        toks.extend(g.tokens)
        origin.extend(prefix + o for o in g.origin)
        src.append(g.src + offset)
        dst.append(g.dst + offset)
        etype.append(g.etype)
        offset += len(g)
    return TokenGraph(
        np.concatenate(ids),
        tuple(toks),
        tuple(origin),
        np.concatenate(src),
        np.concatenate(dst),
        np.concatenate(etype),
    )
