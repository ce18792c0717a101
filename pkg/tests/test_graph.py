import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docgraph.graph import (
    ALL_RELATIONS,
    DocumentGraph,
    EdgeDirection,
    RelationType,
    build_document_graph,
    document_record,
    graph_stats,
    propagation_matrices,
    prune_to_radius,
    sentence_nodes,
    stats_csv,
    text_distance,
    to_dot,
)
from docgraph.tokenize import make_document
from gen import dense_scan, random_document
from oracles import bfs_within, loop_propagation, scan_relations

R = RelationType


def _labelled(graph):
    return {(u, v, lab.value) for u, v, lab in graph.edges}


def test_two_sentence_example():
    # "The cat sat . It slept" with cat/It coreferent and a repeated lemma
    doc = make_document(
        "d",
        [["The", "cat", "sat"], ["The", "cat", "slept"]],
        heads=[[2, 3, 0], [2, 3, 0]],
        coref_chains=[[(0, 1, 1), (1, 0, 1)]],
    )
    g = build_document_graph(doc)
    assert g.edges_of(R.ADJACENCY) == {(0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3), (4, 5), (5, 4)}
    assert g.edges_of(R.DEPENDENCY) == {(1, 0), (2, 1), (4, 3), (5, 4)}
    assert g.edges_of(R.LEXICAL) == {(0, 3), (1, 4)}
    # mention (1, 0, 1) spans "The cat"; its head is "cat" (governed by "slept")
    assert g.edges_of(R.COREFERENCE) == {(1, 4)}


def test_lexical_uses_lemma_and_case():
    doc = make_document("d", [["Runs", "x"], ["ran"]], lemmas=[["run", "x"], ["run"]])
    assert build_document_graph(doc).edges_of(R.LEXICAL) == {(0, 2)}


def test_relation_subset():
    doc, *_ = random_document(np.random.default_rng(3))
    full = build_document_graph(doc)
    only = build_document_graph(doc, [R.LEXICAL])
    assert only.edges == frozenset(e for e in full.edges if e[2] is R.LEXICAL)
    assert only.nodes == full.nodes


def test_no_annotation_document_has_only_adjacency_and_lexical():
    doc = make_document("d", [["a", "b", "a"]])
    g = build_document_graph(doc)
    assert {lab for *_, lab in g.edges} <= {R.ADJACENCY, R.LEXICAL}


def test_single_word_document():
    doc = make_document("d", [["x"]])
    g = build_document_graph(doc)
    assert g.nodes == (0,) and not g.edges
    sub, idx = prune_to_radius(g, doc, 0)
    assert sub.nodes == (0,) and idx == {0: 0}
    p = propagation_matrices(sub)
    assert p.normalized[EdgeDirection.OUT].tolist() == [[0.0]]
    assert p.normalized[EdgeDirection.SELF].tolist() == [[1.0]]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_builder_matches_all_pairs_scan(seed):
    doc, sents, lemmas, heads, chains = random_document(np.random.default_rng(seed))
    assert _labelled(build_document_graph(doc)) == scan_relations(*dense_scan(doc, sents, lemmas, heads, chains))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 4))
def test_prune_matches_bfs(seed, radius):
    doc, *_ = random_document(np.random.default_rng(seed))
    g = build_document_graph(doc)
    pairs = {(u, v) for u, v, _ in g.edges}
    for m in range(len(doc.sentences)):
        sub, idx = prune_to_radius(g, doc, m, radius)
        want = bfs_within(len(doc), pairs, sentence_nodes(doc, m), radius)
        assert set(sub.nodes) == want
        assert list(sub.nodes) == sorted(want)
        assert all(u in want and v in want for u, v, _ in sub.edges)
        assert idx == {v: i for i, v in enumerate(sorted(want))}


def test_radius_zero_is_current_sentence():
    doc, *_ = random_document(np.random.default_rng(9), max_sentences=4)
    g = build_document_graph(doc)
    sub, _ = prune_to_radius(g, doc, 0, radius=0)
    assert list(sub.nodes) == sentence_nodes(doc, 0)


def test_prune_validation():
    doc = make_document("d", [["a"]])
    g = build_document_graph(doc)
    with pytest.raises(ValueError):
        prune_to_radius(g, doc, 0, radius=-1)
    with pytest.raises(IndexError):
        prune_to_radius(g, doc, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_propagation_matches_loops(seed):
    doc, *_ = random_document(np.random.default_rng(seed), max_words=20)
    g = build_document_graph(doc)
    p = propagation_matrices(g)
    a_out = p.adjacency[EdgeDirection.OUT]
    assert np.array_equal(p.adjacency[EdgeDirection.IN], a_out.T)
    assert np.array_equal(p.normalized[EdgeDirection.SELF], np.eye(g.node_count))
    for t in EdgeDirection:
        np.testing.assert_allclose(p.normalized[t], loop_propagation(p.adjacency[t].tolist()), rtol=0, atol=1e-12)
    assert p.stacked().shape == (3, g.node_count, g.node_count)


def test_isolated_node_rows_are_zero():
    g = DocumentGraph((0, 1, 2), frozenset({(0, 1, R.ADJACENCY)}))
    p = propagation_matrices(g)
    out = p.normalized[EdgeDirection.OUT]
    assert out[2].tolist() == [0, 0, 0] and out[:, 2].tolist() == [0, 0, 0]
    assert np.all(np.isfinite(out))


def test_empty_graph_rejected():
    with pytest.raises(ValueError):
        propagation_matrices(DocumentGraph(()))


def test_json_round_trip():
    doc, *_ = random_document(np.random.default_rng(5))
    g = build_document_graph(doc)
    again = DocumentGraph.from_json(json.loads(json.dumps(g.to_json())))
    assert again == g
    rec = document_record(g, doc)
    assert rec["doc_id"] == "d" and len(rec["sentences"]) == len(doc.sentences)


def test_dot_export_lists_every_edge():
    doc = make_document("d", [["a", "b"], ["a"]])
    dot = to_dot(build_document_graph(doc), doc)
    assert dot.startswith('digraph "d"')
    assert dot.count("->") == 3
    assert 'label="lexical"' in dot


def test_text_distance_and_stats():
    doc = make_document("d", [["a", "b"], ["c"], ["d", "a"]])
    assert text_distance(doc, 2, [0]) == 3
    assert text_distance(doc, 0, [0, 1]) == 0
    g = build_document_graph(doc, ALL_RELATIONS)
    rows = graph_stats([g], [doc], bucket_width=2)
    assert sum(r["sentences"] for r in rows) == 3
    csv = stats_csv(rows)
    assert csv.splitlines()[0] == "text_distance_bucket,mean_text_distance,mean_graph_size,sentences"
    with pytest.raises(ValueError):
        graph_stats([g], [], bucket_width=2)
