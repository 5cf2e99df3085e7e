"""Held-out BACC of the sentence model for k in {1, 3, 5, 7} selected document graphs."""

from __future__ import annotations

import argparse

from factgraph.data import record_to_example, split
from factgraph.synthetic import generate_corpus
from factgraph.train import TrainConfig, format_table, k_sweep


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()
    examples = [record_to_example(r) for r in generate_corpus(args.n, seed=12)]
    tr, dev, te = split(examples, (0.8, 0.1, 0.1), seed=0)
    rows = k_sweep(TrainConfig(epochs=args.epochs), tr, dev, te, ks=(1, 3, 5, 7))
    print(format_table(rows, ["k", "bacc", "micro_f1", "best_epoch", "seconds"]))


if __name__ == "__main__":
    main()
