"""Transformer decoder (post-norm, self -> cross -> feed-forward) with an
incremental decoding cache, and the same blocks reused as a plain
Transformer encoder for the linearised baseline."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import _merge_heads, _split_heads
from .errors import IdOutOfRange, ShapeMismatch


def sinusoidal_table(max_len, dim):
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dim // 2])
    return table


def embed_positions(ids, store, positions, prefix="dec", offset=0):
    """h0_i = W E[x_i] + e_pos(i + offset) for an id array of shape (B, T)."""
    ids = np.asarray(ids)
    K = store["embed"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= K):
        raise IdOutOfRange(f"token id outside [0, {K})")
    T = ids.shape[-1]
    if offset + T > len(positions):
        raise IdOutOfRange(f"position {offset + T - 1} beyond table of {len(positions)}")
    x = ad.matmul(ad.embedding(store["embed"], ids), store[f"{prefix}.W_in"])
    return x + ad.Tensor(positions[offset:offset + T])


def init_attention(store, prefix, rng, n):
    for w in ("q", "k", "v", "o"):
        store.matrix(f"{prefix}.W{w}", rng, (n, n))


def init_ffn(store, prefix, rng, n, f):
    store.matrix(f"{prefix}.W1", rng, (n, f))
    store.zeros(f"{prefix}.b1", (f,))
    store.matrix(f"{prefix}.W2", rng, (f, n))
    store.zeros(f"{prefix}.b2", (n,))


def init_norm(store, prefix, n):
    store.ones(f"{prefix}.g", (n,))
    store.zeros(f"{prefix}.b", (n,))


def init_decoder(store, rng, cfg, prefix="dec"):
    n, f = cfg.hidden_dim, cfg.ffn_dim
    store.matrix(f"{prefix}.W_in", rng, (cfg.embed_dim, n))
    for l in range(cfg.layers):
        p = f"{prefix}.{l}"
        init_attention(store, f"{p}.self", rng, n)
        init_norm(store, f"{p}.ln1", n)
        init_attention(store, f"{p}.cross", rng, n)
        init_norm(store, f"{p}.ln2", n)
        init_ffn(store, f"{p}.ffn", rng, n, f)
        init_norm(store, f"{p}.ln3", n)
    store.zeros("out.bias", (cfg.vocab_size,))


def init_transformer_encoder(store, rng, cfg, prefix="benc"):
    n, f = cfg.hidden_dim, cfg.ffn_dim
    store.matrix(f"{prefix}.W_in", rng, (cfg.embed_dim, n))
    for l in range(cfg.layers):
        p = f"{prefix}.{l}"
        init_attention(store, f"{p}.self", rng, n)
        init_norm(store, f"{p}.ln1", n)
        init_ffn(store, f"{p}.ffn", rng, n, f)
        init_norm(store, f"{p}.ln2", n)


def _norm(x, store, prefix):
    return ad.layer_norm(x, store[f"{prefix}.g"], store[f"{prefix}.b"])


def _ffn(x, store, prefix):
    h = ad.relu(ad.matmul(x, store[f"{prefix}.W1"]) + store[f"{prefix}.b1"])
    return ad.matmul(h, store[f"{prefix}.W2"]) + store[f"{prefix}.b2"]


def attend(q, k, v, mask=None):
    """Scaled dot-product attention on head-split tensors (B, h, T, d)."""
    d = q.shape[-1]
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))
    weights = ad.softmax(scores, axis=-1, mask=mask)
    return ad.matmul(weights, v), weights


def project_kv(x, store, prefix, heads):
    k = _split_heads(ad.matmul(x, store[f"{prefix}.Wk"]), heads)
    v = _split_heads(ad.matmul(x, store[f"{prefix}.Wv"]), heads)
    return k, v


def multi_head(x, kv, store, prefix, heads, mask=None):
    q = _split_heads(ad.matmul(x, store[f"{prefix}.Wq"]), heads)
    k, v = project_kv(kv, store, prefix, heads) if isinstance(kv, ad.Tensor) else kv
    out, weights = attend(q, k, v, mask)
    return ad.matmul(_merge_heads(out), store[f"{prefix}.Wo"]), weights


def causal_mask(T):
    return np.tril(np.ones((T, T), dtype=bool))


def _sublayer(x, y, store, prefix, dropout, rng, training):
    if training and dropout > 0:
        y = ad.dropout(y, dropout, rng)
    return _norm(x + y, store, prefix)


def decoder_layer(x, memory, store, prefix, heads, memory_mask=None, dropout=0.0,
                  rng=None, training=False):
    """Masked self-attention, cross-attention over ``memory``, feed-forward;
    each wrapped as LayerNorm(x + sublayer(x)).  Returns the new hidden
    states and the cross-attention weights ``(B, h, T, S)``."""
    B, T, n = x.shape
    if memory.shape[0] != B or memory.shape[-1] != n:
        raise ShapeMismatch(f"decoder input {x.shape} vs memory {memory.shape}")
    self_mask = causal_mask(T)[None, None]
    a, _ = multi_head(x, x, store, f"{prefix}.self", heads, self_mask)
    x = _sublayer(x, a, store, f"{prefix}.ln1", dropout, rng, training)
    mem_mask = None if memory_mask is None else memory_mask[:, None, None, :]
    c, cross = multi_head(x, memory, store, f"{prefix}.cross", heads, mem_mask)
    x = _sublayer(x, c, store, f"{prefix}.ln2", dropout, rng, training)
    f = _ffn(x, store, f"{prefix}.ffn")
    return _sublayer(x, f, store, f"{prefix}.ln3", dropout, rng, training), cross


def output_logits(x, store):
    """Tied output projection: hidden states times the embedding transpose."""
    return ad.matmul(x, ad.transpose(store["embed"])) + store["out.bias"]


def decode(ids, memory, store, cfg, positions, memory_mask=None, rng=None, training=False):
    """Teacher-forced pass over a full prefix; returns logits (B, T, K) and
    the last layer's cross-attention."""
    x = embed_positions(ids, store, positions)
    if training and cfg.dropout > 0:
        x = ad.dropout(x, cfg.dropout, rng)
    cross = None
    for l in range(cfg.layers):
        x, cross = decoder_layer(x, memory, store, f"dec.{l}", cfg.heads, memory_mask,
                                 cfg.dropout, rng, training)
    return output_logits(x, store), cross


def transformer_encode(ids, mask, store, cfg, positions, rng=None, training=False, prefix="benc"):
    """Bidirectional Transformer encoder over padded source ids."""
    x = embed_positions(ids, store, positions, prefix=prefix)
    if training and cfg.dropout > 0:
        x = ad.dropout(x, cfg.dropout, rng)
    key_mask = mask[:, None, None, :]
    for l in range(cfg.layers):
        p = f"{prefix}.{l}"
        a, _ = multi_head(x, x, store, f"{p}.self", cfg.heads, key_mask)
        x = _sublayer(x, a, store, f"{p}.ln1", cfg.dropout, rng, training)
        f = _ffn(x, store, f"{p}.ffn")
        x = _sublayer(x, f, store, f"{p}.ln2", cfg.dropout, rng, training)
    return x


@dataclass
class LayerState:
    """Incremental decoding cache for a batch of streams.

    ``keys``/``values`` hold each layer's self-attention projections of the
    tokens emitted so far; ``cross_kv`` the fixed projections of the memory.
    """

    cross_kv: list
    memory_mask: np.ndarray
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    length: int = 0

    def reorder(self, index):
        index = np.asarray(index)
        self.keys = [k[index] for k in self.keys]
        self.values = [v[index] for v in self.values]
        self.cross_kv = [(k[index], v[index]) for k, v in self.cross_kv]
        if self.memory_mask is not None:
            self.memory_mask = self.memory_mask[index]
        return self


def start_state(memory, store, cfg, memory_mask=None):
    cross_kv = []
    for l in range(cfg.layers):
        k, v = project_kv(memory, store, f"dec.{l}.cross", cfg.heads)
        cross_kv.append((k.data, v.data))
    return LayerState(cross_kv, memory_mask, [None] * cfg.layers, [None] * cfg.layers)


def decode_step(state, ids, store, cfg, positions):
    """Advance every stream by one token.

    Returns log-probabilities ``(B, K)`` for the next token and the last
    layer's cross-attention averaged over heads ``(B, S)``.
    """
    ids = np.asarray(ids).reshape(-1, 1)
    x = embed_positions(ids, store, positions, offset=state.length)
    mem_mask = None if state.memory_mask is None else state.memory_mask[:, None, None, :]
    cross = None
    for l in range(cfg.layers):
        p = f"dec.{l}"
        q = _split_heads(ad.matmul(x, store[f"{p}.self.Wq"]), cfg.heads)
        k, v = project_kv(x, store, f"{p}.self", cfg.heads)
        if state.keys[l] is None:
            state.keys[l], state.values[l] = k.data, v.data
        else:
            state.keys[l] = np.concatenate([state.keys[l], k.data], axis=2)
            state.values[l] = np.concatenate([state.values[l], v.data], axis=2)
        out, _ = attend(q, ad.Tensor(state.keys[l]), ad.Tensor(state.values[l]))
        a = ad.matmul(_merge_heads(out), store[f"{p}.self.Wo"])
        x = _norm(x + a, store, f"{p}.ln1")
        ck, cv = state.cross_kv[l]
        c, cross = multi_head(x, (ad.Tensor(ck), ad.Tensor(cv)), store, f"{p}.cross", cfg.heads, mem_mask)
        x = _norm(x + c, store, f"{p}.ln2")
        x = _norm(x + _ffn(x, store, f"{p}.ffn"), store, f"{p}.ln3")
    state.length += 1
    logp = ad.log_softmax(output_logits(x, store), axis=-1).data[:, 0, :]
    return logp, cross.data[:, :, 0, :].mean(axis=1)
