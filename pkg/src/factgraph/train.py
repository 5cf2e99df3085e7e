"""Training, evaluation and the k sweep."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import FACTUAL, NONFACTUAL, EmptySplit, FactualityExample
from .encoders import BackboneConfig, ModelConfig
from .metrics import MetricsReport, bacc, report
from .models import FactGraph, FactGraphE, Featurizer, summary_score

__all__ = [
    "TrainConfig",
    "TrainResult",
    "build_model",
    "train",
    "evaluate",
    "save_model",
    "load_model",
    "k_sweep",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: str = "sentence"  # or "edge"
    lr: float = 1e-4
    batch_size: int = 4
    epochs: int = 10
    adapter_size: int = 32
    k: int = 5
    seed: int = 0
    max_grad_norm: float = 1.0
    dtype: str = "float32"
    select_on: str = "bacc"  # dev metric; edge models use edge-level BACC
    # desk-scale backbone; "structured" needs d_model >= 128 and 3 layers
    init: str = "structured"
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    max_len: int = 256
    backbone_seed: int = 0
    pool_heads: int = 4
    edge_graph_sum: str = "sum"
    max_vocab: int = 8192
    checkpoint: str | None = None

    def model_config(self, vocab_size: int, boundary_ids: tuple[int, ...] = ()) -> ModelConfig:
        return ModelConfig(
            BackboneConfig(
                vocab_size=vocab_size,
                n_layers=self.n_layers,
                d_model=self.d_model,
                n_heads=self.n_heads,
                d_ff=self.d_ff,
                max_len=self.max_len,
                seed=self.backbone_seed,
                init=self.init,
                boundary_ids=boundary_ids,
            ),
            adapter_size=self.adapter_size,
            pool_heads=self.pool_heads,
            k=self.k,
            seed=self.seed,
            dtype=self.dtype,
            edge_graph_sum=self.edge_graph_sum,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class TrainResult:
    model: FactGraph | FactGraphE
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("nan")
    seconds: float = 0.0


def build_model(config: TrainConfig, featurizer: Featurizer) -> FactGraph | FactGraphE:
    mc = config.model_config(len(featurizer.vocab), featurizer.boundary_ids())
    if config.model == "sentence":
        return FactGraph(mc, featurizer)
    if config.model == "edge":
        return FactGraphE(mc, featurizer)
    raise ValueError(f"unknown model kind {config.model!r}")


def _dev_score(model, examples: Sequence[FactualityExample]) -> float:
    if isinstance(model, FactGraphE):
        probs = model.edge_proba(examples)
        preds = np.concatenate([(p > 0.5).astype(int) for p in probs])
        labels = np.concatenate([model.featurizer.prepare(ex).edge_labels for ex in examples])
        return bacc(preds, labels)
    return bacc(model.predict(examples), [ex.label for ex in examples])


def train(
    config: TrainConfig,
    train_examples: Sequence[FactualityExample],
    dev_examples: Sequence[FactualityExample],
    featurizer: Featurizer | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Adam on the adapter and head tensors with linear decay and no warm-up.

    Gradients are clipped to ``max_grad_norm``. After every epoch the dev
    score is recorded; the returned model holds the weights of the best epoch
    (with zero epochs, the initialization).
    """
    if not train_examples or not dev_examples:
        raise EmptySplit("train and dev splits must be nonempty")
    if any(ex.label is None for ex in [*train_examples, *dev_examples]):
        raise ValueError("training data must be labeled")
    start = time.perf_counter()
    if featurizer is None:
        featurizer = Featurizer.fit(train_examples, k=config.k, max_len=config.max_len, max_size=config.max_vocab)
    model = build_model(config, featurizer)
    trainable = model.params.trainable()
    optimizer = ad.Adam(trainable, lr=config.lr)
    prepared = model.prepare(train_examples)
    model.prepare(dev_examples)
    rng = np.random.default_rng([config.seed, 7])
    n_batches = int(np.ceil(len(prepared) / config.batch_size))
    total_steps = max(1, config.epochs * n_batches)

    result = TrainResult(model)
    best = {n: t.data.copy() for n, t in model.params.items() if t.trainable}
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        losses = []
        for i in range(n_batches):
            batch = [prepared[j] for j in order[i * config.batch_size : (i + 1) * config.batch_size]]
            optimizer.zero_grad()
            loss = model.loss(batch)
            if loss._backward is not None:
                ad.backward(loss)
                ad.clip_grad_norm(trainable, config.max_grad_norm)
                optimizer.step(lr=config.lr * (1.0 - step / total_steps))
            losses.append(float(loss.data))
            step += 1
        score = _dev_score(model, dev_examples)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "dev": score,
                 "seconds": time.perf_counter() - start}
        result.history.append(entry)
        log.info("epoch %d loss %.4f dev %.4f", epoch, entry["loss"], score)
        if on_epoch is not None:
            on_epoch(entry)
        if not (score <= result.best_score):  # also true for the first (nan) comparison
            result.best_score, result.best_epoch = score, epoch
            best = {n: t.data.copy() for n, t in model.params.items() if t.trainable}
    model.params.load_arrays(best)
    result.seconds = time.perf_counter() - start
    if config.checkpoint:
        save_model(config.checkpoint, model, config)
    return result


def evaluate(
    model: FactGraph | FactGraphE,
    examples: Sequence[FactualityExample],
    mode: str = "sentence",
    fallback: FactGraph | None = None,
) -> MetricsReport:
    """Metrics for ``mode`` in {"sentence", "edge", "summary"}.

    ``sentence`` scores every example; for an edge model the labels come from
    OR aggregation and the report also carries edge-level BACC. ``summary``
    groups examples by the ``summary_id`` extra field (default: the example
    id) and reports the mean sentence score per summary alongside.
    """
    labels = np.array([ex.label for ex in examples])
    extra: dict = {}
    if isinstance(model, FactGraphE):
        probs = model.edge_proba(examples)
        edge_pred = np.concatenate([(p > 0.5).astype(int) for p in probs])
        edge_true = np.concatenate([model.featurizer.prepare(ex).edge_labels for ex in examples])
        edge_report = report(edge_pred, edge_true)
        extra["edge_bacc"] = edge_report.bacc
        extra["edge_f1"] = edge_report.micro_f1
        extra["edges"] = int(len(edge_true))
        if mode == "edge":
            return MetricsReport(edge_report.bacc, edge_report.micro_f1, edge_report.recall,
                                 edge_report.confusion, edge_report.n, extra=extra)
        preds = model.predict_sentences(examples, fallback=fallback)
    elif mode == "edge":
        raise ValueError("edge mode needs an edge-level model")
    else:
        preds = model.predict(examples)
    rep = report(preds, labels, **extra)
    if mode == "summary":
        groups: dict[str, list[int]] = {}
        for ex, p in zip(examples, preds):
            groups.setdefault(str(ex.extra.get("summary_id", ex.id)), []).append(int(p))
        scores = {k: summary_score(v) for k, v in groups.items()}
        rep.extra["summaries"] = len(scores)
        rep.extra["mean_summary_score"] = float(np.mean(list(scores.values())))
    return rep


def save_model(path: str | Path, model: FactGraph | FactGraphE, config: TrainConfig) -> None:
    header = {"train": asdict(config), "model": model.config.to_dict(), "featurizer": model.featurizer.state()}
    save_checkpoint(path, model.params.arrays(), model.params.flags(), header)


def load_model(path: str | Path) -> tuple[FactGraph | FactGraphE, TrainConfig]:
    ck = load_checkpoint(path)
    config = TrainConfig.from_dict(ck.config["train"])
    featurizer = Featurizer.from_state(ck.config["featurizer"])
    model = build_model(config, featurizer)
    model.params.load_arrays(ck.tensors)
    return model, config


def k_sweep(
    base: TrainConfig,
    train_examples: Sequence[FactualityExample],
    dev_examples: Sequence[FactualityExample],
    test_examples: Sequence[FactualityExample],
    ks: Sequence[int] = (1, 3, 5, 7),
) -> list[dict]:
    """Train one model per ``k`` and report held-out BACC and micro-F1."""
    rows = []
    for k in ks:
        cfg = TrainConfig.from_dict({**asdict(base), "k": k, "checkpoint": None})
        res = train(cfg, train_examples, dev_examples)
        rep = evaluate(res.model, test_examples, "sentence")
        rows.append({"k": k, "bacc": rep.bacc, "micro_f1": rep.micro_f1, "best_epoch": res.best_epoch,
                     "seconds": res.seconds})
    return rows


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    head = "  ".join(f"{c:>10}" for c in columns)
    body = [
        "  ".join(f"{r[c]:>10.4f}" if isinstance(r[c], float) else f"{r[c]:>10}" for c in columns) for r in rows
    ]
    return "\n".join([head, *body])
