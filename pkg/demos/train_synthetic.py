"""Train the sentence- and edge-level models on a synthetic corruption corpus.

    python demos/train_synthetic.py --n 400 --epochs 3

The full-size run used by the acceptance suite is ``--n 2000 --epochs 10``.
"""

from __future__ import annotations

import argparse
import logging

from factgraph.data import record_to_example, split
from factgraph.models import edge_scores
from factgraph.synthetic import generate_corpus
from factgraph.train import TrainConfig, evaluate, train


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    examples = [record_to_example(r) for r in generate_corpus(args.n, seed=args.seed)]
    tr, dev, te = split(examples, (0.8, 0.1, 0.1), seed=args.seed)
    sentence = train(TrainConfig(model="sentence", epochs=args.epochs), tr, dev)
    print("sentence model")
    print(evaluate(sentence.model, te, "sentence").table())
    edge = train(TrainConfig(model="edge", epochs=args.epochs), tr, dev)
    print("edge model, sentence labels by OR over edges")
    print(evaluate(edge.model, te, "sentence", fallback=sentence.model).table())

    ex = next(e for e in te if e.label == 1)
    print(f"\n{ex.summary}")
    for p in edge_scores(ex, edge.model):
        print(f"  {' '.join(p.edge):<40} p(non-factual)={p.probability:.3f}")


if __name__ == "__main__":
    main()
