"""Smatch: F1 over semantic triples under the best variable alignment.

Hill climbing (:func:`smatch`) is the everyday path; :func:`smatch_bruteforce`
enumerates every injective alignment and is only usable on small graphs, which
is what makes it a good oracle for tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .amr import AmrGraph, Constant

__all__ = [
    "TripleSet",
    "SmatchResult",
    "TooLarge",
    "EmptyInput",
    "to_triples",
    "smatch",
    "smatch_bruteforce",
    "smatch_amr_k",
    "corpus_smatch",
]

BRUTEFORCE_MAX_VARS = 6
# -of roles that are relations in their own right, not inverses
_NOT_INVERSE = {"consist-of", "prep-out-of", "prep-on-behalf-of"}


class TooLarge(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class TripleSet:
    variables: tuple[str, ...]
    instances: tuple[tuple[str, str, str], ...]
    attributes: tuple[tuple[str, str, str], ...]
    relations: tuple[tuple[str, str, str], ...]

    def __len__(self) -> int:
        return len(self.instances) + len(self.attributes) + len(self.relations)

    def all(self) -> set[tuple[str, str, str]]:
        return set(self.instances) | set(self.attributes) | set(self.relations)


@dataclass
class SmatchResult:
    precision: float
    recall: float
    f1: float
    matched: int
    total1: int
    total2: int
    alignment: dict[str, str | None] = field(default_factory=dict)


def _normalize_role(source: str, role: str, target: str) -> tuple[str, str, str]:
    if role.endswith("-of") and role not in _NOT_INVERSE:
        return target, role[:-3], source
    return source, role, target


def to_triples(graph: AmrGraph) -> TripleSet:
    """Instance, attribute and relation triples, with inverse roles normalized.

    Includes the ``(root, "top", concept)`` attribute.
    """
    instances = tuple((v, "instance", c.lower()) for v, c in graph.instances.items())
    attributes = [(graph.root, "top", graph.instances[graph.root].lower())]
    relations = []
    for source, role, target in graph.edges:
        if isinstance(target, Constant):
            attributes.append((source, role, target.value))
        else:
            relations.append(_normalize_role(source, role, target))
    return TripleSet(
        tuple(graph.instances), instances, tuple(dict.fromkeys(attributes)), tuple(dict.fromkeys(relations))
    )


class _Problem:
    """Precomputed match tables for one graph pair."""

    def __init__(self, t1: TripleSet, t2: TripleSet):
        self.vars1 = list(t1.variables)
        self.vars2 = list(t2.variables)
        idx1 = {v: i for i, v in enumerate(self.vars1)}
        idx2 = {v: i for i, v in enumerate(self.vars2)}
        n1, n2 = len(self.vars1), len(self.vars2)

        # unary[i, j]: instance + attribute triples of var i matched when i -> j
        self.unary = np.zeros((n1, n2), dtype=np.int64)
        props2: dict[tuple[str, str], list[int]] = {}
        for v, rel, val in t2.instances + t2.attributes:
            props2.setdefault((rel, val), []).append(idx2[v])
        for v, rel, val in t1.instances + t1.attributes:
            for j in props2.get((rel, val), ()):
                self.unary[idx1[v], j] += 1

        # binary entries (i, k, j, l): relation matched when i -> j and k -> l
        rels2: dict[str, list[tuple[int, int]]] = {}
        for a, rel, b in t2.relations:
            rels2.setdefault(rel, []).append((idx2[a], idx2[b]))
        self.binary: list[tuple[int, int, int, int]] = []
        for a, rel, b in t1.relations:
            for j, l in rels2.get(rel, ()):
                self.binary.append((idx1[a], idx1[b], j, l))
        self.touching: list[list[int]] = [[] for _ in range(n1)]
        for e, (i, k, _, _) in enumerate(self.binary):
            self.touching[i].append(e)
            if k != i:
                self.touching[k].append(e)

    def score(self, mapping: Sequence[int]) -> int:
        total = sum(int(self.unary[i, j]) for i, j in enumerate(mapping) if j >= 0)
        for i, k, j, l in self.binary:
            if mapping[i] == j and mapping[k] == l:
                total += 1
        return total

    def local(self, mapping: Sequence[int], vars_: Sequence[int]) -> int:
        """Contribution of all triples touching any variable in ``vars_``."""
        total = sum(int(self.unary[i, mapping[i]]) for i in vars_ if mapping[i] >= 0)
        entries = set()
        for i in vars_:
            entries.update(self.touching[i])
        for e in entries:
            i, k, j, l = self.binary[e]
            if mapping[i] == j and mapping[k] == l:
                total += 1
        return total


def _greedy_init(problem: _Problem) -> list[int]:
    n1, n2 = problem.unary.shape
    mapping = [-1] * n1
    used: set[int] = set()
    for i in range(n1):
        # concept match first: instance triples carry the concept
        for j in range(n2):
            if j not in used and problem.unary[i, j] > 0:
                mapping[i] = j
                used.add(j)
                break
    free = [j for j in range(n2) if j not in used]
    for i in range(n1):
        if mapping[i] < 0 and free:
            mapping[i] = free.pop(0)
    return mapping


def _random_init(problem: _Problem, rng: np.random.Generator) -> list[int]:
    n1, n2 = problem.unary.shape
    targets = list(rng.permutation(n2))
    if n1 > n2:
        targets += [-1] * (n1 - n2)
        targets = [int(x) for x in rng.permutation(np.asarray(targets))]
    return [int(t) for t in targets[:n1]]


def _climb(problem: _Problem, mapping: list[int]) -> tuple[list[int], int]:
    n1, n2 = problem.unary.shape
    current = problem.score(mapping)
    while True:
        used = set(j for j in mapping if j >= 0)
        best_gain, best_move = 0, None
        for i in range(n1):
            before = problem.local(mapping, [i])
            old = mapping[i]
            for j in list(range(n2)) + [-1]:
                if j == old or (j >= 0 and j in used):
                    continue
                mapping[i] = j
                gain = problem.local(mapping, [i]) - before
                mapping[i] = old
                if gain > best_gain:
                    best_gain, best_move = gain, ("move", i, j)
        for i in range(n1):
            for k in range(i + 1, n1):
                if mapping[i] == mapping[k]:
                    continue
                before = problem.local(mapping, [i, k])
                mapping[i], mapping[k] = mapping[k], mapping[i]
                gain = problem.local(mapping, [i, k]) - before
                mapping[i], mapping[k] = mapping[k], mapping[i]
                if gain > best_gain:
                    best_gain, best_move = gain, ("swap", i, k)
        if best_move is None:
            return mapping, current
        kind, a, b = best_move
        if kind == "move":
            mapping[a] = b
        else:
            mapping[a], mapping[b] = mapping[b], mapping[a]
        current += best_gain


def _result(problem: _Problem, t1: TripleSet, t2: TripleSet, mapping, matched: int) -> SmatchResult:
    n1, n2 = len(t1), len(t2)
    precision = matched / n1 if n1 else 0.0
    recall = matched / n2 if n2 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    alignment = {
        v: (problem.vars2[j] if j >= 0 else None) for v, j in zip(problem.vars1, mapping)
    }
    return SmatchResult(precision, recall, f1, matched, n1, n2, alignment)


def smatch(g1: AmrGraph, g2: AmrGraph, restarts: int = 4, seed: int = 0) -> SmatchResult:
    """Smatch by hill climbing over one-variable moves and pairwise swaps.

    Restart 0 starts from a greedy concept-match alignment, restart ``r > 0``
    from a random injective alignment seeded by ``(seed, r)``. The best
    alignment over restarts is returned; ties keep the earliest.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    t1, t2 = to_triples(g1), to_triples(g2)
    problem = _Problem(t1, t2)
    best_map, best = None, -1
    for r in range(restarts):
        if r == 0:
            start = _greedy_init(problem)
        else:
            start = _random_init(problem, np.random.default_rng([seed, r]))
        mapping, matched = _climb(problem, start)
        if matched > best:
            best_map, best = list(mapping), matched
    return _result(problem, t1, t2, best_map, best)


def smatch_bruteforce(g1: AmrGraph, g2: AmrGraph) -> SmatchResult:
    """Exact Smatch by enumerating every injective variable alignment."""
    t1, t2 = to_triples(g1), to_triples(g2)
    problem = _Problem(t1, t2)
    n1, n2 = len(problem.vars1), len(problem.vars2)
    if min(n1, n2) > BRUTEFORCE_MAX_VARS:
        raise TooLarge(f"brute force needs min(|vars|) <= {BRUTEFORCE_MAX_VARS}, got {min(n1, n2)}")
    if math.perm(max(n1, n2), min(n1, n2)) > 5_000_000:
        raise TooLarge("too many alignments to enumerate")

    best_map, best = None, -1
    if n1 <= n2:
        candidates = (list(p) for p in itertools.permutations(range(n2), n1))
    else:

        def _spread():
            for chosen in itertools.permutations(range(n1), n2):
                mapping = [-1] * n1
                for j, i in enumerate(chosen):
                    mapping[i] = j
                yield mapping

        candidates = _spread()
    for mapping in candidates:
        matched = problem.score(mapping)
        if matched > best:
            best_map, best = mapping, matched
    return _result(problem, t1, t2, best_map, best)


def smatch_amr_k(
    summary_graphs: Sequence[AmrGraph],
    doc_sentence_graphs: Sequence[AmrGraph] | Sequence[Sequence[AmrGraph]],
    k: int = 5,
    restarts: int = 4,
    seed: int = 0,
) -> float:
    """Summary-level Smatch baseline.

    Each summary sentence scores the max Smatch F1 over the first ``k``
    document graphs; the summary score is the mean over sentences.
    ``doc_sentence_graphs`` is either one ranked list shared by every summary
    sentence or one ranked list per summary sentence.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not summary_graphs or not doc_sentence_graphs:
        raise EmptyInput("need at least one summary graph and one document graph")
    per_sentence = not isinstance(doc_sentence_graphs[0], AmrGraph)
    if per_sentence and len(doc_sentence_graphs) != len(summary_graphs):
        raise ValueError("one ranked document list per summary sentence expected")
    scores = []
    pair = 0
    for i, s in enumerate(summary_graphs):
        ranked = doc_sentence_graphs[i] if per_sentence else doc_sentence_graphs
        if not ranked:
            raise EmptyInput(f"no document graphs for summary sentence {i}")
        best = 0.0
        for d in ranked[:k]:
            best = max(best, smatch(s, d, restarts=restarts, seed=seed + pair).f1)
            pair += 1
        scores.append(best)
    return float(np.mean(scores))


def corpus_smatch(results: Sequence[SmatchResult]) -> tuple[float, float, float]:
    """Micro-averaged precision, recall and F1 over many pairs."""
    matched = sum(r.matched for r in results)
    t1 = sum(r.total1 for r in results)
    t2 = sum(r.total2 for r in results)
    p = matched / t1 if t1 else 0.0
    r = matched / t2 if t2 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f
