"""Command-line entry point: ``factgraph <command> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .amr import PenmanError, load_penman_file, serialize_penman
from .canon import amr_to_token_graph, build_vocab, label_corpus, SubwordVocab
from .checkpoint import CheckpointError
from .data import EmptySplit, SchemaViolation, load_dataset, save_dataset, split
from .metrics import ZeroVariance, RankDeficient, partial_corr, pearson, spearman
from .smatch import corpus_smatch, smatch
from .synthetic import generate_corpus
from .train import TrainConfig, evaluate, format_table, load_model, train

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


DATA_ERRORS = (PenmanError, SchemaViolation, CheckpointError, EmptySplit, OSError, json.JSONDecodeError,
               ZeroVariance, RankDeficient, KeyError)


def _emit(obj, fh=None) -> None:
    print(json.dumps(obj, sort_keys=True), file=fh or sys.stdout)


# -- commands ----------------------------------------------------------------


def cmd_parse(args) -> int:
    graphs = load_penman_file(args.file)
    out = [serialize_penman(g, indent=None if args.oneline else 4) for g in graphs]
    if args.out:
        Path(args.out).write_text("\n\n".join(out) + "\n", encoding="utf-8")
    elif not args.quiet:
        print("\n\n".join(out))
    print(f"{len(graphs)} graphs ok", file=sys.stderr)
    return 0


def cmd_canon(args) -> int:
    graphs = load_penman_file(args.file)
    vocab = SubwordVocab.load(args.vocab) if args.vocab else build_vocab(label_corpus(graphs), max_size=args.max_vocab)
    if args.save_vocab:
        vocab.save(args.save_vocab)
    for i, g in enumerate(graphs):
        tg = amr_to_token_graph(g, vocab, args.max_nodes)
        _emit({"graph": i, "variables": len(g.instances), "edges": len(g.edges),
               "bipartite_nodes": len(g.instances) + len(g.edges), "tokens": len(tg),
               **tg.edge_counts()})
    return 0


def cmd_smatch(args) -> int:
    left, right = load_penman_file(args.file1), load_penman_file(args.file2)
    if len(left) != len(right):
        raise SchemaViolation(f"{len(left)} graphs vs {len(right)} graphs")
    results = []
    for i, (a, b) in enumerate(zip(left, right)):
        r = smatch(a, b, restarts=args.restarts, seed=args.seed)
        results.append(r)
        _emit({"pair": i, "precision": r.precision, "recall": r.recall, "f1": r.f1})
    p, r, f = corpus_smatch(results)
    _emit({"corpus": True, "precision": p, "recall": r, "f1": f})
    return 0


def cmd_synth(args) -> int:
    records = generate_corpus(args.n, seed=args.seed)
    save_dataset(args.out, records)
    labels = [r["label"] for r in records]
    print(f"wrote {len(records)} records ({labels.count('non_factual')} non_factual) to {args.out}", file=sys.stderr)
    return 0


def _train_config(args) -> TrainConfig:
    values = {f.name: getattr(args, f.name) for f in fields(TrainConfig) if getattr(args, f.name, None) is not None}
    return TrainConfig.from_dict(values)


def cmd_train(args) -> int:
    examples = load_dataset(args.data)
    if args.dev:
        train_set, dev_set = examples, load_dataset(args.dev)
    else:
        train_set, dev_set, _ = split(examples, (0.8, 0.1, 0.1), seed=args.split_seed)
    config = _train_config(args)
    config.checkpoint = args.out
    result = train(config, train_set, dev_set, on_epoch=lambda e: print(json.dumps(e), file=sys.stderr))
    _emit({"best_epoch": result.best_epoch, "best_dev": result.best_score, "seconds": result.seconds,
           "checkpoint": args.out})
    return 0


def _fallback(path):
    return load_model(path)[0] if path else None


def cmd_score(args) -> int:
    model, _ = load_model(args.checkpoint)
    examples = load_dataset(args.data)
    if args.mode == "edge":
        for ex, probs in zip(examples, model.edge_proba(examples)):
            edges = [{"edge": list(map(str, e)), "p_nonfactual": float(p), "label": int(p > 0.5)}
                     for e, p in zip(ex.summary_graph.edges, probs)]
            _emit({"id": ex.id, "edges": edges})
        return 0
    if hasattr(model, "predict_sentences"):
        preds = model.predict_sentences(examples, fallback=_fallback(args.fallback))
        probs = [None] * len(examples)
    else:
        probs = model.predict_proba(examples)
        preds = (probs > 0.5).astype(int)
    groups: dict[str, list[int]] = {}
    for ex, y, p in zip(examples, preds, probs):
        row = {"id": ex.id, "label": ["factual", "non_factual"][int(y)]}
        if p is not None:
            row["p_nonfactual"] = float(p)
        if args.mode == "sentence":
            _emit(row)
        groups.setdefault(str(ex.extra.get("summary_id", ex.id)), []).append(int(y))
    if args.mode == "summary":
        for key, labels in groups.items():
            _emit({"summary_id": key, "score": float(np.mean([1 - l for l in labels])), "sentences": len(labels)})
    return 0


def cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    examples = load_dataset(args.data)
    if any(ex.label is None for ex in examples):
        raise SchemaViolation("evaluation needs labels on every record")
    rep = evaluate(model, examples, args.mode, fallback=_fallback(args.fallback))
    if args.json:
        _emit(rep.to_dict())
    else:
        print(rep.table())
    return 0


def _read_table(path: str) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".csv") or path.endswith(".tsv"):
        return list(csv.DictReader(text.splitlines(), delimiter="\t" if path.endswith(".tsv") else ","))
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def cmd_corr(args) -> int:
    rows = _read_table(args.file)
    x = np.array([float(r[args.x]) for r in rows])
    y = np.array([float(r[args.y]) for r in rows])
    out = {"n": len(rows)}
    out["pearson"], out["pearson_p"] = pearson(x, y)
    out["spearman"], out["spearman_p"] = spearman(x, y)
    if args.covariate:
        levels = sorted({str(r[args.covariate]) for r in rows})
        # one indicator column per level beyond the first
        cov = np.array([[float(str(r[args.covariate]) == lv) for lv in levels[1:]] for r in rows]).reshape(len(rows), -1)
        out["partial_pearson"], out["partial_pearson_p"] = partial_corr(x, y, cov, "pearson")
        out["partial_spearman"], out["partial_spearman_p"] = partial_corr(x, y, cov, "spearman")
    if args.json:
        _emit(out)
    else:
        for key, value in out.items():
            print(f"{key:<20} {value:.6g}" if isinstance(value, float) else f"{key:<20} {value}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="factgraph", description="AMR-based factuality checking for summaries.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("parse", help="validate and re-serialize Penman graphs")
    p.add_argument("file")
    p.add_argument("--out")
    p.add_argument("--oneline", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("canon", help="token-graph statistics per graph (JSON lines)")
    p.add_argument("file")
    p.add_argument("--vocab")
    p.add_argument("--save-vocab")
    p.add_argument("--max-vocab", type=int, default=8192)
    p.add_argument("--max-nodes", type=int, default=512)
    p.set_defaults(func=cmd_canon)

    p = sub.add_parser("smatch", help="pairwise Smatch between two Penman files")
    p.add_argument("file1")
    p.add_argument("file2")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_smatch)

    p = sub.add_parser("synth", help="generate a synthetic corruption corpus")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a sentence- or edge-level model")
    p.add_argument("--data", required=True)
    p.add_argument("--dev", help="dev file; default is a seeded 80/10/10 split of --data")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--split-seed", type=int, default=0)
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        if f.name == "checkpoint":
            continue
        value = getattr(defaults, f.name)
        kind = type(value) if value is not None else str
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None,
                       help=f"default {value}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a dataset (JSON lines)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("sentence", "edge", "summary"), default="sentence")
    p.add_argument("--fallback", help="sentence-level checkpoint for edgeless graphs")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="metrics on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("sentence", "edge", "summary"), default="sentence")
    p.add_argument("--fallback")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corr", help="correlation of model scores with human scores")
    p.add_argument("file", help="JSON lines, CSV or TSV")
    p.add_argument("--x", required=True, help="model score column")
    p.add_argument("--y", required=True, help="human score column")
    p.add_argument("--covariate", help="categorical column regressed out, e.g. origin")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_corr)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
