import dataclasses

import numpy as np
import pytest
from support import random_triples, small_vocab, tiny_config, weighted_sum

from nabu import autodiff as ad
from nabu.config import ModelConfig
from nabu.encoder import (GatLayerParams, aggregate_edges, build_inputs, collate_graphs, edge_fuse,
                          encode, featurize, format_attention, gat_layer, init_gat_encoder,
                          init_gat_layer)
from nabu.errors import ShapeMismatch
from nabu.gradcheck import check_directions, check_entries
from nabu.graph import Triple, reify, relabel_language

EINSTEIN = [Triple("Albert_Einstein", "birthPlace", "Germany")]


@pytest.fixture(autouse=True)
def float64():
    with ad.precision(np.float64):
        yield


@pytest.fixture(scope="module")
def vocab():
    return small_vocab()


def make_store(cfg, seed=0):
    store = ad.ParameterStore()
    rng = np.random.default_rng(seed)
    store.matrix("embed", rng, (cfg.vocab_size, cfg.embed_dim))
    init_gat_encoder(store, rng, cfg)
    return store


def batch_of(graphs, vocab):
    return collate_graphs([featurize(g, vocab) for g in graphs])


def encoder_input(batch, store):
    inp = build_inputs(batch, store)
    E = edge_fuse(inp.S, inp.D, store["enc.edge.W"], store["enc.edge.b"])
    return (inp.H + inp.L + aggregate_edges(E, batch.dst_agg)).data


def permute_nodes(graph, perm):
    """Same graph with node i moved to position perm[i]."""
    nodes = [None] * len(graph.nodes)
    kinds = [None] * len(graph.nodes)
    for i, p in enumerate(perm):
        nodes[p], kinds[p] = graph.nodes[i], graph.kinds[i]
    edges = tuple((int(perm[s]), r, int(perm[d])) for s, r, d in graph.edges)
    return dataclasses.replace(graph, nodes=tuple(nodes), kinds=tuple(kinds), edges=edges)


# inputs ---------------------------------------------------------------------

def test_einstein_input_shapes(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    inp = build_inputs(batch_of([reify(EINSTEIN, "ENG")], vocab), store)
    assert inp.H.shape == (1, 4, 8)
    assert inp.S.shape == inp.D.shape == (1, 3, 8)
    assert inp.L.shape == (1, 4, 8)


def test_single_feature_node_is_its_embedding(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    g = reify(EINSTEIN, "GER")
    feats = featurize(g, vocab)
    inp = build_inputs(collate_graphs([feats]), store)
    assert np.array_equal(inp.H.data[0, 0], store["embed"].data[vocab.lang_id("GER")])
    # multi-piece nodes average their pieces
    rows = feats.feat_ids[feats.feat_node == 1]
    assert np.allclose(inp.H.data[0, 1], store["embed"].data[rows].mean(axis=0))


def test_s_and_d_are_endpoint_rows(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    g = reify(EINSTEIN + [Triple("Germany", "capital", "Berlin")], "ENG")
    inp = build_inputs(batch_of([g], vocab), store)
    for e, (s, _, d) in enumerate(g.edges):
        assert np.array_equal(inp.S.data[0, e], inp.H.data[0, s])
        assert np.array_equal(inp.D.data[0, e], inp.H.data[0, d])


def test_label_vector_is_mean_over_incident_relations(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    inp = build_inputs(batch_of([reify(EINSTEIN, "ENG")], vocab), store)
    rel = store["enc.label"].data            # rows A0, A1, LANG
    # subject has an outgoing A0 and an incoming LANG edge
    assert np.allclose(inp.L.data[0, 1], (rel[0] + rel[2]) / 2)
    assert np.allclose(inp.L.data[0, 2], (rel[0] + rel[1]) / 2)
    assert np.allclose(inp.L.data[0, 3], rel[1])


@pytest.mark.parametrize("seed", range(5))
def test_edge_order_does_not_change_node_inputs(vocab, seed):
    rng = np.random.default_rng(seed)
    cfg = tiny_config(len(vocab))
    store = make_store(cfg, seed)
    g = reify(random_triples(rng), "RUS")
    shuffled = dataclasses.replace(g, edges=tuple(g.edges[i] for i in rng.permutation(len(g.edges))))
    a = encoder_input(batch_of([g], vocab), store)
    b = encoder_input(batch_of([shuffled], vocab), store)
    assert np.allclose(a, b, atol=1e-12)


# edge fusion ----------------------------------------------------------------

def test_edge_fuse_zero_inputs():
    S = ad.Tensor(np.zeros((1, 3, 4)))
    out = edge_fuse(S, S, ad.Tensor(np.random.default_rng(0).standard_normal((8, 4))), ad.Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 3, 4)))


def test_edge_fuse_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        edge_fuse(ad.Tensor(np.zeros((1, 3, 4))), ad.Tensor(np.zeros((1, 2, 4))),
                  ad.Tensor(np.zeros((8, 4))), ad.Tensor(np.zeros(4)))


def test_single_incoming_edge_aggregates_to_that_row(vocab):
    g = reify(EINSTEIN, "ENG")
    batch = batch_of([g], vocab)
    E = ad.Tensor(np.random.default_rng(1).standard_normal((1, 3, 5)))
    agg = aggregate_edges(E, batch.dst_agg).data
    for e, (_, _, d) in enumerate(g.edges):
        assert np.array_equal(agg[0, d], E.data[0, e])
    assert np.array_equal(agg[0, 0], np.zeros(5))     # the language node has no incoming edge


def test_sum_aggregation_flag(vocab):
    g = reify([Triple("A", "p", "C"), Triple("B", "q", "C")], "ENG")
    feats = [featurize(g, vocab)]
    mean, total = collate_graphs(feats, "mean"), collate_graphs(feats, "sum")
    c = g.nodes.index("C")
    assert mean.dst_agg[0, c].sum() == pytest.approx(1.0)
    assert total.dst_agg[0, c].sum() == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(5))
def test_edge_path_gradients(vocab, seed):
    rng = np.random.default_rng(seed)
    g = reify(random_triples(rng, max_triples=3), "ENG")
    batch = batch_of([g], vocab)
    S = ad.Tensor(rng.standard_normal((1, len(g.edges), 4)), requires_grad=True, name="S")
    D = ad.Tensor(rng.standard_normal((1, len(g.edges), 4)), requires_grad=True, name="D")
    W = ad.Tensor(rng.standard_normal((8, 4)), requires_grad=True, name="W")
    b = ad.Tensor(rng.standard_normal(4), requires_grad=True, name="b")
    loss = lambda: weighted_sum(aggregate_edges(edge_fuse(S, D, W, b), batch.dst_agg), seed)  # noqa: E731
    assert check_entries(loss, [S, D, W, b], eps=1e-6) < 1e-4


# attention ------------------------------------------------------------------

def layer_params(n=8, heads=2, seed=0):
    store = ad.ParameterStore()
    init_gat_layer(store, "g", np.random.default_rng(seed), n, heads)
    return store, GatLayerParams.from_store(store, "g", heads)


def test_alpha_rows_sum_to_one_on_random_graphs(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    rng = np.random.default_rng(7)
    for _ in range(100):
        graphs = [reify(random_triples(rng), "ENG") for _ in range(2)]
        batch = batch_of(graphs, vocab)
        _, attention = encode(batch, store, cfg, keep_attention=True)
        for alpha in attention:
            assert np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-5)
            assert (alpha >= 0).all()
            assert np.all(alpha[~np.broadcast_to(batch.adjacency[:, None], alpha.shape)] == 0)


def test_self_loop_only_node_attends_to_itself():
    _, params = layer_params()
    X = ad.Tensor(np.random.default_rng(0).standard_normal((1, 3, 8)))
    _, alpha = gat_layer(X, params, np.eye(3, dtype=bool)[None])
    assert np.array_equal(alpha.data[0, 0], np.eye(3))


def test_identical_neighbours_split_evenly():
    _, params = layer_params()
    x = np.random.default_rng(0).standard_normal(8)
    X = ad.Tensor(np.stack([np.zeros(8), x, x])[None])
    adj = np.array([[[False, True, True], [True, True, False], [True, False, True]]])
    _, alpha = gat_layer(X, params, adj)
    assert np.allclose(alpha.data[0, :, 0], [0.0, 0.5, 0.5])


def test_gcn_mode_matches_uniform_attention():
    store, params = layer_params(seed=3)
    rng = np.random.default_rng(3)
    X = ad.Tensor(rng.standard_normal((2, 5, 8)))
    adj = rng.random((2, 5, 5)) < 0.4
    adj |= adj.transpose(0, 2, 1)
    adj[:, np.arange(5), np.arange(5)] = True
    gcn, coeff = gat_layer(X, params, adj, mode="gcn")
    assert np.allclose(coeff.data.sum(-1), 1.0)
    store["g.a_src"].data[:] = 0.0
    store["g.a_dst"].data[:] = 0.0
    uniform, alpha = gat_layer(X, params, adj)
    assert np.allclose(alpha.data, coeff.data, atol=1e-12)
    assert np.allclose(uniform.data, gcn.data, atol=1e-5)


def test_one_layer_identity_single_node():
    store, params = layer_params()
    store["g.W"].data = np.eye(8)
    store["g.Wo"].data = np.eye(8)
    x = np.random.default_rng(0).standard_normal((1, 1, 8))
    out, _ = gat_layer(ad.Tensor(x), params, np.ones((1, 1, 1), dtype=bool))
    y = x + np.where(x > 0, x, np.expm1(x))
    expected = (y - y.mean(-1, keepdims=True)) / np.sqrt(y.var(-1, keepdims=True) + 1e-5)
    assert np.allclose(out.data, expected, atol=1e-12)


def test_path_graph_locality():
    _, params = layer_params(seed=5)
    n = 5
    adj = np.eye(n, dtype=bool)
    adj[np.arange(n - 1), np.arange(1, n)] = True
    adj[np.arange(1, n), np.arange(n - 1)] = True
    X = ad.Tensor(np.random.default_rng(5).standard_normal((1, n, 8)), requires_grad=True)
    with ad.Tape() as tape:
        out, _ = gat_layer(X, params, adj[None])
        first_row = ad.matmul(ad.Tensor(np.eye(n)[:1][None]), out)
        tape.backward(weighted_sum(first_row))
    grad = X.grad[0]
    assert np.all(grad[2:] == 0.0)
    assert np.any(grad[:2] != 0.0)
    # finite differences agree that far nodes have no influence on node 0
    base = gat_layer(X, params, adj[None])[0].data[0, 0].copy()
    X.data[0, 3] += 1.0
    assert np.array_equal(gat_layer(X, params, adj[None])[0].data[0, 0], base)


# whole encoder --------------------------------------------------------------

def test_default_memory_shape(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), dropout=0.0)
    store = make_store(cfg)
    memory, _ = encode(batch_of([reify(EINSTEIN, "ENG")], vocab), store, cfg)
    assert memory.shape == (1, 4, 256)


@pytest.mark.parametrize("seed", range(5))
def test_node_permutation_equivariance(vocab, seed):
    rng = np.random.default_rng(seed)
    cfg = tiny_config(len(vocab))
    store = make_store(cfg, seed)
    g = reify(random_triples(rng), "ENG")
    perm = rng.permutation(len(g.nodes))
    h = permute_nodes(g, perm)
    a, _ = encode(batch_of([g], vocab), store, cfg)
    b, _ = encode(batch_of([h], vocab), store, cfg)
    assert np.allclose(b.data[0, perm], a.data[0], rtol=0, atol=1e-12)


def test_language_swap_keeps_shapes(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    g = reify(EINSTEIN, "ENG")
    a, b = batch_of([g], vocab), batch_of([relabel_language(g, "RUS")], vocab)
    assert np.array_equal(a.adjacency, b.adjacency)
    ma, mb = encode(a, store, cfg)[0], encode(b, store, cfg)[0]
    assert ma.shape == mb.shape
    assert not np.allclose(ma.data, mb.data)


def test_padding_does_not_leak(vocab):
    cfg = tiny_config(len(vocab))
    store = make_store(cfg)
    small = reify(EINSTEIN, "ENG")
    big = reify([Triple(f"S{i}", "p", f"O{i}") for i in range(5)], "GER")
    alone, _ = encode(batch_of([small], vocab), store, cfg)
    padded, _ = encode(batch_of([small, big], vocab), store, cfg)
    assert np.allclose(padded.data[0, :4], alone.data[0], atol=1e-12)


@pytest.mark.parametrize("mode", ["gat", "gcn"])
def test_every_encoder_parameter_gets_gradient(vocab, mode):
    cfg = tiny_config(len(vocab), gat_mode=mode)
    store = make_store(cfg)
    g = reify(EINSTEIN + [Triple("Germany", "capital", "Berlin")], "ENG")
    with ad.Tape() as tape:
        memory, _ = encode(batch_of([g], vocab), store, cfg)
        tape.backward(weighted_sum(memory))
    unused = {"enc.0.a_src", "enc.0.a_dst", "enc.1.a_src", "enc.1.a_dst"} if mode == "gcn" else set()
    for name, p in store.items():
        if name in unused:
            continue
        assert p.grad is not None and np.any(p.grad != 0), name


@pytest.mark.parametrize("seed", range(5))
def test_full_encoder_finite_differences(vocab, seed):
    rng = np.random.default_rng(seed)
    cfg = tiny_config(len(vocab))
    store = make_store(cfg, seed)
    batch = batch_of([reify(random_triples(rng, 3), "ENG"), reify(random_triples(rng, 3), "GER")], vocab)
    loss = lambda: weighted_sum(encode(batch, store, cfg)[0], seed)  # noqa: E731
    params = [p for name, p in store.items() if name != "embed"]
    worst, where = check_directions(loss, params, rng, eps=1e-6)
    assert worst < 1e-4, where


def test_format_attention(vocab):
    cfg = tiny_config(len(vocab), layers=1)
    store = make_store(cfg)
    g = reify(EINSTEIN, "ENG")
    _, attention = encode(batch_of([g], vocab), store, cfg, keep_attention=True)
    text = format_attention(attention[0][0], g.nodes)
    assert text.count("head ") == 2
    assert "Albert_Einstein" in text
