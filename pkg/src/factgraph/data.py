"""Dataset records: JSON-lines schema, validation, loading and splits."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .amr import AmrGraph, PenmanError, parse_penman, serialize_penman

__all__ = [
    "FACTUAL",
    "NONFACTUAL",
    "LABEL_NAMES",
    "ORIGINS",
    "FactualityExample",
    "SchemaViolation",
    "DeduplicatedWarning",
    "EmptySplit",
    "record_to_example",
    "example_to_record",
    "parse_records",
    "load_dataset",
    "save_dataset",
    "split",
]

FACTUAL, NONFACTUAL = 0, 1
LABEL_NAMES = ("factual", "non_factual")
ORIGINS = ("cnndm", "xsum", "synthetic")


class SchemaViolation(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DeduplicatedWarning(UserWarning):
    pass


class EmptySplit(ValueError):
    pass


@dataclass
class FactualityExample:
    id: str
    document: list[str]
    doc_graphs: list[AmrGraph]
    summary: str
    summary_graph: AmrGraph
    label: int | None = None
    spans: list[tuple[int, int]] = field(default_factory=list)
    alignments: dict[str, list[int]] | None = None
    origin: str = "synthetic"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.doc_graphs) != len(self.document):
            raise ValueError("one document graph per document sentence required")


def _require(cond: bool, message: str, line: int | None) -> None:
    if not cond:
        raise SchemaViolation(message, line)


def _parse(text, what: str, line: int | None) -> AmrGraph:
    _require(isinstance(text, str), f"{what} must be a Penman string", line)
    try:
        return parse_penman(text)
    except PenmanError as exc:
        raise SchemaViolation(f"{what}: {exc}", line) from None


def record_to_example(rec: dict, line: int | None = None) -> FactualityExample:
    """Validate one record and parse its graphs."""
    _require(isinstance(rec, dict), "record must be an object", line)
    for key in ("id", "origin", "document", "doc_amrs", "summary_sentence", "summary_amr"):
        _require(key in rec, f"missing field {key!r}", line)
    _require(isinstance(rec["id"], str) and rec["id"], "id must be a nonempty string", line)
    _require(rec["origin"] in ORIGINS, f"origin must be one of {ORIGINS}", line)
    doc = rec["document"]
    _require(isinstance(doc, list) and doc and all(isinstance(s, str) for s in doc),
             "document must be a nonempty array of strings", line)
    amrs = rec["doc_amrs"]
    _require(isinstance(amrs, list) and len(amrs) == len(doc), "doc_amrs must match document length", line)
    summary = rec["summary_sentence"]
    _require(isinstance(summary, str), "summary_sentence must be a string", line)
    doc_graphs = [_parse(a, f"doc_amrs[{i}]", line) for i, a in enumerate(amrs)]
    summary_graph = _parse(rec["summary_amr"], "summary_amr", line)

    label = rec.get("label")
    if label is not None:
        _require(label in LABEL_NAMES, f"label must be one of {LABEL_NAMES}", line)
        label = LABEL_NAMES.index(label)
    spans = []
    for span in rec.get("nonfactual_spans") or []:
        _require(isinstance(span, (list, tuple)) and len(span) == 2, "span must be [start, end)", line)
        start, end = span
        _require(isinstance(start, int) and isinstance(end, int) and 0 <= start <= end <= len(summary),
                 f"span {span} out of bounds", line)
        spans.append((start, end))
    align = rec.get("alignments")
    if align is not None:
        _require(isinstance(align, dict), "alignments must be an object", line)
        nodes = set(summary_graph.node_ids())
        for node, idx in align.items():
            _require(node in nodes, f"aligned node {node!r} not in summary graph", line)
            _require(isinstance(idx, list) and all(isinstance(i, int) and i >= 0 for i in idx),
                     f"alignment of {node!r} must be an array of token indices", line)
        align = {k: list(v) for k, v in align.items()}
    known = {"id", "origin", "document", "doc_amrs", "summary_sentence", "summary_amr",
             "label", "nonfactual_spans", "alignments"}
    extra = {k: v for k, v in rec.items() if k not in known}
    return FactualityExample(rec["id"], list(doc), doc_graphs, summary, summary_graph, label, spans, align,
                             rec["origin"], extra)


def example_to_record(ex: FactualityExample) -> dict:
    rec = {
        "id": ex.id,
        "origin": ex.origin,
        "document": list(ex.document),
        "doc_amrs": [serialize_penman(g, indent=None) for g in ex.doc_graphs],
        "summary_sentence": ex.summary,
        "summary_amr": serialize_penman(ex.summary_graph, indent=None),
    }
    if ex.label is not None:
        rec["label"] = LABEL_NAMES[ex.label]
    if ex.spans:
        rec["nonfactual_spans"] = [list(s) for s in ex.spans]
    if ex.alignments is not None:
        rec["alignments"] = ex.alignments
    rec.update(ex.extra)
    return rec


def parse_records(lines: Iterable[str]) -> list[FactualityExample]:
    """Parse JSON lines; blank lines are skipped, duplicate ids dropped with a warning."""
    out: list[FactualityExample] = []
    seen: set[str] = set()
    dropped = 0
    for n, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg}", n) from None
        ex = record_to_example(rec, n)
        if ex.id in seen:
            dropped += 1
            continue
        seen.add(ex.id)
        out.append(ex)
    if not out:
        raise SchemaViolation("dataset is empty")
    if dropped:
        warnings.warn(f"dropped {dropped} records with duplicate ids", DeduplicatedWarning, stacklevel=2)
    return out


def load_dataset(path: str | Path) -> list[FactualityExample]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh)


def save_dataset(path: str | Path, examples: Iterable[FactualityExample | dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = ex if isinstance(ex, dict) else example_to_record(ex)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split(
    records: Sequence, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list, ...]:
    """Seeded split stratified by label.

    Records of each label are shuffled and interleaved at evenly spaced
    positions, so any contiguous slice keeps the label ratio; the combined
    order is then cut by ``fractions`` (largest-remainder rounding).
    """
    if not records:
        raise EmptySplit("nothing to split")
    fr = np.asarray(fractions, dtype=float)
    if np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise ValueError("fractions must be nonnegative and sum to 1")
    rng = np.random.default_rng(seed)
    groups: dict = {}
    for r in records:
        groups.setdefault(getattr(r, "label", None), []).append(r)
    keyed = []
    for key in sorted(groups, key=lambda k: (k is None, k)):
        members = groups[key]
        order = rng.permutation(len(members))
        for rank, i in enumerate(order):
            keyed.append(((rank + 0.5) / len(members), len(keyed), members[i]))
    keyed.sort(key=lambda t: (t[0], t[1]))
    ordered = [t[2] for t in keyed]

    n = len(ordered)
    raw = fr * n
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return tuple(ordered[bounds[i] : bounds[i + 1]] for i in range(len(sizes)))
