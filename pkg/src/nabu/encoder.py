"""Graph attention encoder over reified graphs, plus the linearised-input
Transformer encoder used as the comparison baseline.

All encoder functions work on padded batches: node tensors are
``(batch, nodes, dim)`` and padded nodes only attend to themselves.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .graph import RELATIONS, linearize, node_feature_labels

REL_INDEX = {r: i for i, r in enumerate(RELATIONS)}


@dataclass
class GraphFeatures:
    """Index view of one graph, independent of any parameters."""

    feat_ids: np.ndarray      # (F,) subword ids of all node feature tokens
    feat_node: np.ndarray     # (F,) owning node of each feature token
    n_nodes: int
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_rel: np.ndarray
    labels: tuple


def featurize(graph, vocab):
    ids, owner = [], []
    for i, (words, kind) in enumerate(zip(node_feature_labels(graph), graph.kinds)):
        if kind == "lang":
            pieces = [vocab.token_to_id[words[0]]]
        else:
            pieces = vocab.encode(" ".join(words)) or [vocab.unk_id]
        ids += pieces
        owner += [i] * len(pieces)
    src, rel, dst = zip(*graph.edges)
    return GraphFeatures(np.array(ids), np.array(owner), len(graph.nodes),
                         np.array(src), np.array(dst), np.array([REL_INDEX[r] for r in rel]),
                         graph.nodes)


@dataclass
class GraphBatch:
    feat_ids: np.ndarray      # (B, F)
    feat_avg: np.ndarray      # (B, Z, F) mean-of-pieces weights
    src_onehot: np.ndarray    # (B, Ze, Z)
    dst_onehot: np.ndarray    # (B, Ze, Z)
    edge_rel: np.ndarray      # (B, Ze)
    dst_agg: np.ndarray       # (B, Z, Ze) incoming-edge aggregation weights
    label_avg: np.ndarray     # (B, Z, Ze) incident-edge mean weights
    adjacency: np.ndarray     # (B, Z, Z) bool, self loops included
    node_mask: np.ndarray     # (B, Z) bool
    labels: list

    @property
    def memory_mask(self):
        return self.node_mask

    @property
    def source_labels(self):
        return self.labels


def collate_graphs(feats, edge_aggregation="mean"):
    B = len(feats)
    Z = max(f.n_nodes for f in feats)
    F = max(len(f.feat_ids) for f in feats)
    E = max(len(f.edge_src) for f in feats)
    feat_ids = np.zeros((B, F), dtype=np.int64)
    feat_avg = np.zeros((B, Z, F))
    src_onehot = np.zeros((B, E, Z))
    dst_onehot = np.zeros((B, E, Z))
    edge_rel = np.zeros((B, E), dtype=np.int64)
    dst_agg = np.zeros((B, Z, E))
    label_avg = np.zeros((B, Z, E))
    adjacency = np.zeros((B, Z, Z), dtype=bool)
    node_mask = np.zeros((B, Z), dtype=bool)
    idx = np.arange(Z)
    for b, f in enumerate(feats):
        nf, ne = len(f.feat_ids), len(f.edge_src)
        feat_ids[b, :nf] = f.feat_ids
        feat_avg[b, f.feat_node, np.arange(nf)] = 1.0
        feat_avg[b] /= np.maximum(feat_avg[b].sum(axis=1, keepdims=True), 1.0)
        e = np.arange(ne)
        src_onehot[b, e, f.edge_src] = 1.0
        dst_onehot[b, e, f.edge_dst] = 1.0
        edge_rel[b, :ne] = f.edge_rel
        dst_agg[b, f.edge_dst, e] = 1.0
        if edge_aggregation == "mean":
            dst_agg[b] /= np.maximum(dst_agg[b].sum(axis=1, keepdims=True), 1.0)
        np.add.at(label_avg[b], (f.edge_src, e), 1.0)
        np.add.at(label_avg[b], (f.edge_dst, e), 1.0)
        label_avg[b] /= np.maximum(label_avg[b].sum(axis=1, keepdims=True), 1.0)
        # undirected neighbourhoods
        adjacency[b, f.edge_src, f.edge_dst] = True
        adjacency[b, f.edge_dst, f.edge_src] = True
        node_mask[b, :f.n_nodes] = True
    adjacency[:, idx, idx] = True
    return GraphBatch(feat_ids, feat_avg, src_onehot, dst_onehot, edge_rel, dst_agg,
                      label_avg, adjacency, node_mask, [f.labels for f in feats])


@dataclass
class EncoderInputs:
    """Node vectors H, per-edge source/destination vectors S and D, node
    label vectors L, and the neighbourhood mask."""

    H: ad.Tensor
    S: ad.Tensor
    D: ad.Tensor
    L: ad.Tensor
    adjacency: np.ndarray


def build_inputs(batch, store):
    """H rows are the mean of each node's subword embeddings; S/D gather the
    endpoint rows of H per edge; L averages relation embeddings over the
    edges incident to each node."""
    pieces = ad.embedding(store["embed"], batch.feat_ids)
    H = ad.matmul(ad.Tensor(batch.feat_avg), pieces)
    S = ad.matmul(ad.Tensor(batch.src_onehot), H)
    D = ad.matmul(ad.Tensor(batch.dst_onehot), H)
    rel = ad.embedding(store["enc.label"], batch.edge_rel)
    L = ad.matmul(ad.Tensor(batch.label_avg), rel)
    return EncoderInputs(H, S, D, L, batch.adjacency)


def edge_fuse(S, D, weight, bias):
    """Per-edge vector ``relu([S ; D] W + b)`` projected back to node width."""
    if S.shape != D.shape:
        raise ShapeMismatch(f"edge_fuse: S {S.shape} vs D {D.shape}")
    return ad.relu(ad.matmul(ad.concat([S, D], axis=-1), weight) + bias)


def aggregate_edges(E_edge, dst_agg):
    return ad.matmul(ad.Tensor(dst_agg), E_edge)


@dataclass
class GatLayerParams:
    W: ad.Tensor          # (n, n): heads stacked column-wise
    a_src: ad.Tensor      # (heads, d_head) scoring weights for the receiving node
    a_dst: ad.Tensor      # (heads, d_head) scoring weights for the neighbour
    Wo: ad.Tensor         # (n, n) head fusion
    gain: ad.Tensor
    bias: ad.Tensor
    heads: int

    @classmethod
    def from_store(cls, store, prefix, heads):
        return cls(store[f"{prefix}.W"], store[f"{prefix}.a_src"], store[f"{prefix}.a_dst"],
                   store[f"{prefix}.Wo"], store[f"{prefix}.ln.g"], store[f"{prefix}.ln.b"], heads)


def init_gat_layer(store, prefix, rng, n, heads):
    d = n // heads
    store.matrix(f"{prefix}.W", rng, (n, n))
    store.matrix(f"{prefix}.a_src", rng, (heads, d))
    store.matrix(f"{prefix}.a_dst", rng, (heads, d))
    store.matrix(f"{prefix}.Wo", rng, (n, n))
    store.ones(f"{prefix}.ln.g", (n,))
    store.zeros(f"{prefix}.ln.b", (n,))


def _split_heads(x, heads):
    B, T, n = x.shape
    return ad.transpose(ad.reshape(x, (B, T, heads, n // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    B, h, T, d = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, T, h * d))


def gat_layer(X, params, adjacency, mode="gat", dropout=0.0, rng=None, training=False):
    """One multi-head graph attention layer.

    Per head: g = x W_h, e_ij = LeakyReLU(a_src.g_i + a_dst.g_j) over j in
    N_i, alpha = softmax_j(e), out_i = ELU(sum_j alpha_ij g_j).  Heads are
    concatenated, fused by Wo, residual-added to X and layer-normed.
    Returns ``(output, alpha)`` with alpha shaped ``(B, heads, Z, Z)``.
    """
    h = params.heads
    B, Z, n = X.shape
    d = n // h
    G = _split_heads(ad.matmul(X, params.W), h)                        # (B,h,Z,d)
    mask = adjacency[:, None, :, :]
    if mode == "gcn":
        counts = adjacency.sum(axis=-1, keepdims=True)
        alpha = ad.Tensor(np.broadcast_to((adjacency / counts)[:, None], (B, h, Z, Z)))
    else:
        s_src = ad.matmul(G, ad.reshape(params.a_src, (h, d, 1)))          # (B,h,Z,1)
        s_dst = ad.matmul(G, ad.reshape(params.a_dst, (h, d, 1)))
        e = ad.leaky_relu(s_src + ad.swapaxes(s_dst, -1, -2), 0.2)        # (B,h,Z,Z)
        alpha = ad.softmax(e, axis=-1, mask=mask)
        if training and dropout > 0:
            alpha = ad.dropout(alpha, dropout, rng)
    heads_out = ad.elu(ad.matmul(alpha, G))
    fused = ad.matmul(_merge_heads(heads_out), params.Wo)
    if training and dropout > 0:
        fused = ad.dropout(fused, dropout, rng)
    return ad.layer_norm(X + fused, params.gain, params.bias), alpha


def init_gat_encoder(store, rng, cfg):
    m = cfg.embed_dim
    store.matrix("enc.label", rng, (len(RELATIONS), m))
    store.matrix("enc.edge.W", rng, (2 * m, m))
    store.zeros("enc.edge.b", (m,))
    for l in range(cfg.layers):
        init_gat_layer(store, f"enc.{l}", rng, cfg.hidden_dim, cfg.heads)


def encode(batch, store, cfg, rng=None, training=False, keep_attention=False):
    """Stack ``cfg.layers`` GAT layers on H + L + E.  Returns the memory
    ``(B, Z, n)`` and, if asked, each layer's attention coefficients."""
    inputs = build_inputs(batch, store)
    E_edge = edge_fuse(inputs.S, inputs.D, store["enc.edge.W"], store["enc.edge.b"])
    X = inputs.H + inputs.L + aggregate_edges(E_edge, batch.dst_agg)
    attention = []
    for l in range(cfg.layers):
        params = GatLayerParams.from_store(store, f"enc.{l}", cfg.heads)
        X, alpha = gat_layer(X, params, batch.adjacency, cfg.gat_mode, cfg.dropout, rng, training)
        if keep_attention:
            attention.append(alpha.data)
    return X, attention


def format_attention(alpha, labels):
    """Text matrix per head for inspecting one graph's coefficients."""
    blocks = []
    z = len(labels)
    for h, mat in enumerate(alpha):
        rows = [f"head {h}"]
        rows.append("\t" + "\t".join(labels))
        for i in range(z):
            rows.append(labels[i] + "\t" + "\t".join(f"{v:.4f}" for v in mat[i, :z]))
        blocks.append("\n".join(rows))
    return "\n\n".join(blocks)


# linearised-input baseline --------------------------------------------------

@dataclass
class SequenceBatch:
    ids: np.ndarray           # (B, S)
    mask: np.ndarray          # (B, S) bool
    labels: list              # per example, surface label of each source position

    @property
    def memory_mask(self):
        return self.mask

    @property
    def source_labels(self):
        return self.labels


def featurize_linear(graph, vocab):
    """Subword ids of the linearised graph and, per id, the source word it came from."""
    ids, labels = [], []
    for word in linearize(graph, separator=vocab.id_to_token[vocab.sep_id]):
        if word in vocab.token_to_id and vocab.is_special(vocab.token_to_id[word]):
            pieces = [vocab.token_to_id[word]]
        else:
            pieces = vocab.encode(word) or [vocab.unk_id]
        ids += pieces
        labels += [word] * len(pieces)
    return np.array(ids), tuple(labels)


def collate_sequences(items, pad_id):
    B = len(items)
    S = max(len(ids) for ids, _ in items)
    ids = np.full((B, S), pad_id, dtype=np.int64)
    mask = np.zeros((B, S), dtype=bool)
    for b, (seq, _) in enumerate(items):
        ids[b, :len(seq)] = seq
        mask[b, :len(seq)] = True
    return SequenceBatch(ids, mask, [labels for _, labels in items])
