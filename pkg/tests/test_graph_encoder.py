import numpy as np
import pytest

from docgraph import autodiff as ad
from docgraph.autodiff import Parameter, Stage, Tensor
from docgraph.graph import EdgeDirection, build_document_graph, propagation_matrices, prune_to_radius
from docgraph.graph_encoder import (
    Aggregation,
    GraphEncoder,
    GraphEncoderConfig,
    aggregate_directions,
    encode_graph,
    gcn_direction_pass,
    init_node_embeddings,
    subword_index,
)
from docgraph.tokenize import learn_bpe, make_document
from gen import random_document
from oracles import loop_gcn_pass, loop_type_attention


def _random_prop(rng, n):
    a = (rng.random((n, n)) < 0.3).astype(float)
    np.fill_diagonal(a, 0)
    deg = a.sum(0)
    inv = np.where(deg > 0, 1 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    return inv[:, None] * a * inv[None, :]


def test_gcn_pass_matches_loops(rng):
    h, w, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 4)), rng.normal(size=4)
    p = _random_prop(rng, 5)
    out = gcn_direction_pass(Tensor(h), p, Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, loop_gcn_pass(h.tolist(), p.tolist(), w.tolist(), b), atol=1e-12)


def test_gcn_pass_zero_propagation_gives_half():
    out = gcn_direction_pass(Tensor(np.ones((3, 2))), np.zeros((3, 3)), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    assert np.all(out.data == 0.5)


def test_gcn_pass_shape_errors():
    with pytest.raises(ad.ShapeError):
        gcn_direction_pass(Tensor(np.ones((3, 2))), np.eye(3), Tensor(np.ones((4, 4))), Tensor(np.zeros(4)))
    with pytest.raises(ad.ShapeError):
        gcn_direction_pass(Tensor(np.ones((3, 2))), np.eye(4), Tensor(np.eye(2)), Tensor(np.zeros(2)))


def test_type_attention_matches_loops(rng):
    h = rng.normal(size=(4, 6))
    outs = [rng.normal(size=(4, 6)) for _ in range(3)]
    got = aggregate_directions(Tensor(h), [Tensor(o) for o in outs])
    want, alphas = loop_type_attention(h, outs)
    np.testing.assert_allclose(got.data, want, atol=1e-12)
    np.testing.assert_allclose(alphas.sum(1), 1.0)


def test_type_attention_identical_directions_is_that_direction(rng):
    h, o = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    got = aggregate_directions(Tensor(h), [Tensor(o)] * 3)
    np.testing.assert_allclose(got.data, o, atol=1e-12)


def test_gating_aggregation_is_normalized_mix(rng):
    outs = [Tensor(np.full((2, 3), float(k))) for k in range(3)]
    zeros = [(Tensor(np.zeros((3, 1))), Tensor(np.zeros(1)))] * 3
    got = aggregate_directions(Tensor(np.zeros((2, 3))), outs, Aggregation.GATING_UNITS, zeros)
    np.testing.assert_allclose(got.data, 1.0)
    with pytest.raises(ValueError):
        aggregate_directions(Tensor(np.zeros((2, 3))), outs, Aggregation.GATING_UNITS)
    with pytest.raises(ValueError):
        aggregate_directions(Tensor(np.zeros((2, 3))), outs[:2])


def test_grad_check_gcn_pass(rng):
    h = Parameter("h", rng.normal(size=(5, 4)))
    w = Parameter("w", rng.normal(size=(4, 4)) * 0.5)
    b = Parameter("b", rng.normal(size=4))
    p = _random_prop(rng, 5)
    weights = rng.normal(size=(5, 4))
    assert ad.grad_check(lambda: (gcn_direction_pass(h, p, w, b) * weights).sum(), [h, w, b]) < 1e-4


def test_grad_check_type_attention(rng):
    h = Parameter("h", rng.normal(size=(4, 5)))
    outs = [Parameter(f"o{t}", rng.normal(size=(4, 5))) for t in range(3)]
    weights = rng.normal(size=(4, 5))
    assert ad.grad_check(lambda: (aggregate_directions(h, outs) * weights).sum(), [h] + outs) < 1e-4


@pytest.mark.parametrize("aggregation", list(Aggregation))
def test_grad_check_stacked_encoder(rng, aggregation):
    cfg = GraphEncoderConfig(6, 2, aggregation, 0.0)
    enc = GraphEncoder("g", cfg, np.random.default_rng(0))
    h0 = Parameter("h0", rng.normal(size=(5, 6)))
    prop = np.stack([_random_prop(rng, 5), _random_prop(rng, 5), np.eye(5)])
    weights = rng.normal(size=(5, 6))
    assert ad.grad_check(lambda: (enc(h0, prop) * weights).sum(), [h0] + enc.parameters()) < 1e-4


def test_encoder_parameters_are_stage2():
    enc = GraphEncoder("g", GraphEncoderConfig(4, 3), np.random.default_rng(0))
    ps = enc.parameters()
    assert len(ps) == 3 * 6
    assert all(p.stage is Stage.STAGE2 for p in ps)
    assert len({p.name for p in ps}) == len(ps)


def test_config_validation():
    with pytest.raises(ValueError):
        GraphEncoderConfig(4, 0)
    with pytest.raises(ValueError):
        GraphEncoderConfig(4, 1, dropout=1.0)


def test_subword_index_and_missing_mapping():
    ids, w = subword_index([[3], [4, 5]])
    assert ids.tolist() == [[3, 0], [4, 5]]
    np.testing.assert_allclose(w, [[1, 0], [0.5, 0.5]])
    with pytest.raises(KeyError, match="node 1"):
        subword_index([[1], []])


def test_node_embedding_is_mean_of_subwords():
    bpe = learn_bpe([["ab", "cd"]], 1)
    doc = make_document("d", [["ab", "cd"]], bpe)
    table = Tensor(np.arange(len(bpe) * 2, dtype=float).reshape(-1, 2))
    out = init_node_embeddings(doc, [0, 1], table)
    for i, ids in enumerate(doc.subword_map):
        np.testing.assert_allclose(out.data[i], table.data[ids].mean(0))
    bare = make_document("d", [["ab"]])
    with pytest.raises(KeyError, match="'ab'"):
        init_node_embeddings(bare, [0], table)


def test_encode_graph_end_to_end(rng):
    doc, sents, *_ = random_document(np.random.default_rng(11), with_coref=False)
    bpe = learn_bpe(sents, 30)
    doc = make_document("d", sents, bpe)
    g, idx = prune_to_radius(build_document_graph(doc), doc, 0)
    cfg = GraphEncoderConfig(8)
    enc = GraphEncoder("g", cfg, np.random.default_rng(1))
    table = Tensor(rng.normal(size=(len(bpe), 8)))
    rep = encode_graph(g, doc, cfg, enc, table)
    assert rep.node_reprs.shape == (g.node_count, 8) and rep.remap == idx
    # propagation is what a single direction pass consumes
    assert propagation_matrices(g).stacked()[int(EdgeDirection.SELF)].trace() == g.node_count
    with pytest.raises(ValueError):
        encode_graph(g, doc, GraphEncoderConfig(8, 1), enc, table)
