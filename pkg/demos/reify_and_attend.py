"""Walk one small graph through reification and a freshly initialised GAT
encoder, printing the node list, the edge list and the first layer's
attention weights.

    python demos/reify_and_attend.py
"""

import numpy as np

from nabu import autodiff as ad
from nabu.config import ModelConfig
from nabu.encoder import encode, format_attention
from nabu.graph import Triple, linearize, reify
from nabu.model import NabuModel
from nabu.tokenizer import train_bpe

triples = [
    Triple("Albert_Einstein", "birthPlace", "Ulm"),
    Triple("Ulm", "country", "Germany"),
    Triple("Albert_Einstein", "almaMater", "ETH_Zurich"),
]
graph = reify(triples, "ENG")

print("Reified graph (predicates become nodes, one per occurrence):")
print(graph.dump())
print("\nThe baseline sees the same facts as a flat sequence:")
print(" ".join(linearize(graph)))

# A toy vocabulary is enough to embed the node labels.
vocab = train_bpe(["Albert Einstein was born in Ulm , Germany .", "He studied at ETH Zurich ."] * 2
                  + ["birth place", "country", "alma mater"] * 2, 300)
cfg = ModelConfig(embed_dim=16, hidden_dim=16, heads=2, layers=2, ffn_dim=32, dropout=0.0,
                  vocab_size=len(vocab))
with ad.precision(np.float64):
    model = NabuModel(cfg, seed=0)
    batch = model.collate([model.featurize(graph, vocab)], vocab.pad_id)
    memory, attention = encode(batch, model.store, cfg, keep_attention=True)

print(f"\nEncoder memory: {memory.shape} (batch, nodes, hidden)")
print("\nLayer 1 attention (rows sum to 1, zero outside each neighbourhood):")
print(format_attention(attention[0][0], graph.nodes))
