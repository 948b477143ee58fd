"""Small shared builders for the test suite."""

import numpy as np

from nabu.config import ModelConfig
from nabu.graph import Triple, node_feature_labels, reify
from nabu.synthetic import synthetic_records
from nabu.tokenizer import train_bpe


def tokenizer_corpus(records):
    """Target sentences plus the words of every node label, as the CLI does."""
    corpus = [t for r in records for t in r.texts]
    for r in records:
        g = reify(r.triples, r.lang)
        corpus += [" ".join(w) for w, k in zip(node_feature_labels(g), g.kinds) if k != "lang"]
    return corpus


def small_vocab(n_graphs=20, size=400, seed=0):
    return train_bpe(tokenizer_corpus(synthetic_records(n_graphs, seed=seed)), size)


def tiny_config(vocab_size, **overrides):
    kw = dict(embed_dim=8, hidden_dim=8, vocab_size=vocab_size, heads=2, layers=2, ffn_dim=16,
              dropout=0.0, max_positions=256)
    kw.update(overrides)
    return ModelConfig(**kw)


def random_triples(rng, max_triples=7, n_entities=6, n_predicates=4):
    n = int(rng.integers(1, max_triples + 1))
    return [Triple(f"E{rng.integers(n_entities)}", f"p{rng.integers(n_predicates)}",
                   f"E{rng.integers(n_entities)}") for _ in range(n)]


def weighted_sum(t, seed=123):
    from nabu import autodiff as ad
    w = np.random.default_rng(seed).standard_normal(t.shape)
    return ad.sum(t * w)
