"""Multi-relation document graphs, radius pruning and GCN propagation matrices."""

from __future__ import annotations

import collections
import csv
import enum
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tokenize import AnnotatedDocument


class RelationType(enum.Enum):
    ADJACENCY = "adjacency"
    DEPENDENCY = "dependency"
    LEXICAL = "lexical"
    COREFERENCE = "coreference"


ALL_RELATIONS = frozenset(RelationType)


class EdgeDirection(enum.IntEnum):
    IN = 0
    OUT = 1
    SELF = 2


Edge = tuple  # (src, dst, RelationType)


@dataclass(frozen=True)
class DocumentGraph:
    nodes: tuple[int, ...]
    edges: frozenset = field(default_factory=frozenset)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def index(self) -> dict[int, int]:
        """Dense position of every node id."""
        return {v: i for i, v in enumerate(self.nodes)}

    def edges_of(self, label: RelationType) -> set[tuple[int, int]]:
        return {(u, v) for u, v, lab in self.edges if lab is label}

    def undirected_neighbors(self) -> dict[int, set[int]]:
        nbrs: dict[int, set[int]] = {v: set() for v in self.nodes}
        for u, v, _ in self.edges:
            nbrs[u].add(v)
            nbrs[v].add(u)
        return nbrs

    def to_json(self) -> dict:
        edges = sorted(self.edges, key=lambda e: (e[0], e[1], e[2].value))
        return {
            "nodes": list(self.nodes),
            "edges": [[u, v, lab.value] for u, v, lab in edges],
        }

    @classmethod
    def from_json(cls, d: dict) -> "DocumentGraph":
        edges = frozenset((int(u), int(v), RelationType(lab)) for u, v, lab in d["edges"])
        return cls(tuple(int(v) for v in d["nodes"]), edges)


def mention_head(doc: AnnotatedDocument, mention) -> int:
    """Global index standing in for a mention: its syntactic head, else its first word.

    The head is the first word of the span whose governor lies outside the
    span; when the sentence carries no dependency arcs the first word is used.
    """
    s, start, end = mention
    offset = doc.sentence_offsets()[s]
    span = set(range(offset + start, offset + end + 1))
    governor = {dep: head for head, dep in doc.dep_arcs}
    sentence = set(range(offset, offset + len(doc.sentences[s])))
    if not any(dep in sentence for dep in governor):
        return offset + start
    for g in sorted(span):
        if governor.get(g) not in span:
            return g
    return offset + start


def _lexical_key(token) -> tuple[str, str]:
    return token.surface.lower(), token.lemma.lower()


def build_document_graph(
    doc: AnnotatedDocument, relations: Iterable[RelationType] = ALL_RELATIONS
) -> DocumentGraph:
    """Directed graph over every word of ``doc``.

    ``relations`` restricts which relation types are emitted (relation
    ablations rebuild the graph with a subset).
    """
    relations = frozenset(relations)
    tokens = doc.tokens
    edges: set = set()

    if RelationType.ADJACENCY in relations:
        for sent in doc.sentences:
            for a, b in zip(sent, sent[1:]):
                edges.add((a.global_index, b.global_index, RelationType.ADJACENCY))
                edges.add((b.global_index, a.global_index, RelationType.ADJACENCY))

    if RelationType.DEPENDENCY in relations:
        for head, dep in doc.dep_arcs:
            if head != dep:
                edges.add((head, dep, RelationType.DEPENDENCY))

    if RelationType.LEXICAL in relations:
        by_surface: dict[str, list[int]] = collections.defaultdict(list)
        by_lemma: dict[str, list[int]] = collections.defaultdict(list)
        for tok in tokens:
            surface, lemma = _lexical_key(tok)
            for earlier in set(by_surface[surface]) | set(by_lemma[lemma]):
                edges.add((earlier, tok.global_index, RelationType.LEXICAL))
            by_surface[surface].append(tok.global_index)
            by_lemma[lemma].append(tok.global_index)

    if RelationType.COREFERENCE in relations:
        for chain in doc.coref_chains:
            heads = [mention_head(doc, m) for m in sorted(chain)]
            for a, b in zip(heads, heads[1:]):
                if a != b:
                    src, dst = min(a, b), max(a, b)
                    edges.add((src, dst, RelationType.COREFERENCE))

    return DocumentGraph(tuple(t.global_index for t in tokens), frozenset(edges))


def sentence_nodes(doc: AnnotatedDocument, sentence_index: int) -> list[int]:
    if not 0 <= sentence_index < len(doc.sentences):
        raise IndexError(
            f"sentence_index {sentence_index} out of range for {len(doc.sentences)} sentences"
        )
    return [t.global_index for t in doc.sentences[sentence_index]]


def prune_to_radius(
    graph: DocumentGraph,
    doc: AnnotatedDocument,
    sentence_index: int,
    radius: int = 2,
) -> tuple[DocumentGraph, dict[int, int]]:
    """Keep nodes within undirected distance ``radius`` of the current sentence.

    Returns the induced subgraph and the map from global index to dense index.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    current = sentence_nodes(doc, sentence_index)
    nbrs = graph.undirected_neighbors()
    dist = {v: 0 for v in current}
    frontier = list(current)
    for depth in range(1, radius + 1):
        nxt = []
        for u in frontier:
            for v in nbrs.get(u, ()):
                if v not in dist:
                    dist[v] = depth
                    nxt.append(v)
        frontier = nxt
    keep = tuple(sorted(dist))
    edges = frozenset(e for e in graph.edges if e[0] in dist and e[1] in dist)
    sub = DocumentGraph(keep, edges)
    return sub, sub.index()


@dataclass(frozen=True)
class PropagationMatrices:
    """Per-direction adjacency ``A``, in-degree ``D`` and ``D^-1/2 A D^-1/2``."""

    adjacency: dict
    degree: dict
    normalized: dict

    def stacked(self) -> np.ndarray:
        """Normalized matrices as one ``[3, L, L]`` array ordered by EdgeDirection."""
        return np.stack([self.normalized[t] for t in EdgeDirection])


def _normalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    deg = a.sum(axis=0)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return np.diag(deg), inv_sqrt[:, None] * a * inv_sqrt[None, :]


def propagation_matrices(graph: DocumentGraph) -> PropagationMatrices:
    n = graph.node_count
    if n < 1:
        raise ValueError("propagation matrices need at least one node")
    idx = graph.index()
    a_out = np.zeros((n, n))
    for u, v, _ in graph.edges:
        a_out[idx[u], idx[v]] = 1.0
    mats = {
        EdgeDirection.OUT: a_out,
        EdgeDirection.IN: a_out.T.copy(),
        EdgeDirection.SELF: np.eye(n),
    }
    adjacency, degree, normalized = {}, {}, {}
    for t, a in mats.items():
        adjacency[t] = a
        degree[t], normalized[t] = _normalize(a)
    return PropagationMatrices(adjacency, degree, normalized)


# ---------------------------------------------------------------------------
# diagnostics and export


def text_distance(doc: AnnotatedDocument, sentence_index: int, nodes: Iterable[int]) -> int:
    """Largest word offset between the current sentence and any retained node."""
    current = sentence_nodes(doc, sentence_index)
    lo, hi = current[0], current[-1]
    far = 0
    for v in nodes:
        if v < lo:
            far = max(far, lo - v)
        elif v > hi:
            far = max(far, v - hi)
    return far


def sentence_stats(graph: DocumentGraph, doc: AnnotatedDocument, radius: int = 2):
    """(text distance, graph size) for every sentence of a document."""
    rows = []
    for m in range(len(doc.sentences)):
        sub, _ = prune_to_radius(graph, doc, m, radius)
        rows.append((text_distance(doc, m, sub.nodes), sub.node_count))
    return rows


def graph_stats(
    graphs: Sequence[DocumentGraph],
    docs: Sequence[AnnotatedDocument],
    bucket_width: int = 10,
    radius: int = 2,
) -> list[dict]:
    """Mean pruned-graph size per text-distance bucket.

    Bucket ``b`` collects sentences whose text distance falls in
    ``[b*width, (b+1)*width)``; the reported distance is the bucket's lower
    edge.
    """
    if len(graphs) != len(docs):
        raise ValueError(f"{len(graphs)} graphs but {len(docs)} documents")
    buckets: dict[int, list[int]] = collections.defaultdict(list)
    distances: dict[int, list[int]] = collections.defaultdict(list)
    for graph, doc in zip(graphs, docs):
        for dist, size in sentence_stats(graph, doc, radius):
            b = dist // bucket_width
            buckets[b].append(size)
            distances[b].append(dist)
    return [
        {
            "text_distance_bucket": b * bucket_width,
            "mean_text_distance": float(np.mean(distances[b])),
            "mean_graph_size": float(np.mean(buckets[b])),
            "sentences": len(buckets[b]),
        }
        for b in sorted(buckets)
    ]


def growth_ratio(rows: Sequence[dict]) -> float:
    """Graph-size increase per word of text-distance increase, first to last bucket.

    Nodes are words, so both growths share a unit; a value below 1 means the
    pruned graph grows more slowly than the distance it spans.
    """
    if len(rows) < 2:
        raise ValueError("growth ratio needs at least two distance buckets")
    first, last = rows[0], rows[-1]
    span = last["mean_text_distance"] - first["mean_text_distance"]
    if span <= 0:
        raise ValueError("text distance does not increase across buckets")
    return (last["mean_graph_size"] - first["mean_graph_size"]) / span


def stats_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    fields = ["text_distance_bucket", "mean_text_distance", "mean_graph_size", "sentences"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in fields})
    return buf.getvalue()


_DOT_COLORS = {
    RelationType.ADJACENCY: "blue",
    RelationType.DEPENDENCY: "green",
    RelationType.LEXICAL: "red",
    RelationType.COREFERENCE: "brown",
}


def to_dot(graph: DocumentGraph, doc: AnnotatedDocument) -> str:
    tokens = {t.global_index: t for t in doc.tokens}
    lines = [f'digraph "{doc.doc_id}" {{']
    for v in graph.nodes:
        t = tokens[v]
        label = f"s{t.sentence_index}w{t.word_index}:{t.surface}".replace('"', '\\"')
        lines.append(f'  n{v} [label="{label}"];')
    for u, v, lab in sorted(graph.edges, key=lambda e: (e[0], e[1], e[2].value)):
        lines.append(f'  n{u} -> n{v} [color={_DOT_COLORS[lab]}, label="{lab.value}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def document_record(graph: DocumentGraph, doc: AnnotatedDocument) -> dict:
    """JSON export of a graph together with the sentence layout needed for stats."""
    record = {"doc_id": doc.doc_id}
    record.update(graph.to_json())
    record["sentences"] = [[t.surface for t in s] for s in doc.sentences]
    return record


def dumps_records(records: Sequence[dict]) -> str:
    return "\n".join(json.dumps(r, ensure_ascii=False) for r in records) + "\n"
