"""Miniature models and corpora shared by the model-level tests."""

from __future__ import annotations

from functools import lru_cache

from factgraph.data import record_to_example
from factgraph.encoders import BackboneConfig, ModelConfig
from factgraph.models import Featurizer
from factgraph.synthetic import generate_corpus


def mini_config(vocab_size: int, init: str = "random", **kw) -> ModelConfig:
    """L=2, d=32, m=8 at float64."""
    backbone = BackboneConfig(
        vocab_size=vocab_size, n_layers=2, d_model=32, n_heads=4, d_ff=64, max_len=96, init=init, seed=3
    )
    return ModelConfig(backbone, adapter_size=8, pool_heads=4, k=2, dtype="float64", **kw)


@lru_cache(maxsize=4)
def corpus(n: int = 12, seed: int = 0):
    """Synthetic examples plus a featurizer fitted on them."""
    examples = [record_to_example(r) for r in generate_corpus(n, seed=seed)]
    featurizer = Featurizer.fit(examples, k=2, max_len=96, max_size=200)
    return examples, featurizer


def structured_config(vocab_size: int, boundary_ids=(), **kw) -> ModelConfig:
    """Default-width backbone (the structured layout needs d_model >= 128), m=8, float64."""
    backbone = BackboneConfig(vocab_size=vocab_size, max_len=96, boundary_ids=boundary_ids)
    return ModelConfig(backbone, adapter_size=8, pool_heads=4, k=2, dtype="float64", **kw)


def config_for(init: str, featurizer, **kw) -> ModelConfig:
    if init == "random":
        return mini_config(len(featurizer.vocab), **kw)
    return structured_config(len(featurizer.vocab), featurizer.boundary_ids(), **kw)
