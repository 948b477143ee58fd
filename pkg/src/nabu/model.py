"""The full verbaliser: shared embeddings, a graph (or linearised) encoder and
the Transformer decoder, all parameters held in one ParameterStore."""

import numpy as np

from . import autodiff as ad
from .decoder import (decode, decode_step, init_decoder, init_transformer_encoder,
                      sinusoidal_table, start_state, transformer_encode)
from .encoder import (collate_graphs, collate_sequences, encode, featurize, featurize_linear,
                      init_gat_encoder)


class NabuModel:
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.store = ad.ParameterStore()
        self.store.matrix("embed", rng, (cfg.vocab_size, cfg.embed_dim))
        if cfg.encoder == "gat":
            init_gat_encoder(self.store, rng, cfg)
        else:
            init_transformer_encoder(self.store, rng, cfg)
        init_decoder(self.store, rng, cfg)
        self.positions = sinusoidal_table(cfg.max_positions, cfg.hidden_dim)
        self.dropout_rng = np.random.default_rng([seed, 1])

    @property
    def uses_graph(self):
        return self.cfg.encoder == "gat"

    def featurize(self, graph, vocab):
        return featurize(graph, vocab) if self.uses_graph else featurize_linear(graph, vocab)

    def collate(self, feats, pad_id=0):
        if self.uses_graph:
            return collate_graphs(feats, self.cfg.edge_aggregation)
        return collate_sequences(feats, pad_id)

    def encode(self, src, training=False, keep_attention=False):
        """Memory tensor (B, S, n) for a collated source batch."""
        if self.uses_graph:
            memory, attention = encode(src, self.store, self.cfg, self.dropout_rng, training,
                                       keep_attention)
            return (memory, attention) if keep_attention else memory
        memory = transformer_encode(src.ids, src.mask, self.store, self.cfg, self.positions,
                                    self.dropout_rng, training)
        return (memory, []) if keep_attention else memory

    def forward(self, src, tgt_in, training=False):
        memory = self.encode(src, training)
        return decode(tgt_in, memory, self.store, self.cfg, self.positions, src.memory_mask,
                      self.dropout_rng, training)

    def loss(self, src, tgt_in, tgt_out, tgt_mask, training=False):
        logits, _ = self.forward(src, tgt_in, training)
        return ad.cross_entropy(logits, tgt_out, tgt_mask), logits

    def start(self, src):
        memory = self.encode(src)
        return start_state(memory, self.store, self.cfg, src.memory_mask)

    def step(self, state, ids):
        return decode_step(state, ids, self.store, self.cfg, self.positions)
