"""Direction-typed GCN encoder for pruned document graphs.

Each layer runs three graph convolutions (incoming edges, outgoing edges,
self loops) and merges them per node, either with dot-product type
attention against the previous layer or with learned sigmoid gates.
All functions accept an optional leading batch axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Stage, Tensor
from .graph import DocumentGraph, EdgeDirection, propagation_matrices
from .tokenize import AnnotatedDocument


class Aggregation(enum.Enum):
    TYPE_ATTENTION = "attention"
    GATING_UNITS = "gating"


@dataclass(frozen=True)
class GraphEncoderConfig:
    hidden_size: int
    num_layers: int = 2
    aggregation: Aggregation = Aggregation.TYPE_ATTENTION
    dropout: float = 0.2

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"graph encoder needs num_layers >= 1, got {self.num_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class GraphRepresentation:
    node_reprs: Tensor
    remap: dict[int, int]


def init_node_embeddings(
    doc: AnnotatedDocument, nodes, embedding_table: Tensor
) -> Tensor:
    """Mean of each node's subword embedding rows, ``[L, d]``."""
    ids, weights = subword_index([doc.subword_map[v] if v < len(doc.subword_map) else []
                                  for v in nodes], _names(doc, nodes))
    return embed_nodes(embedding_table, ids, weights)


def _names(doc, nodes):
    tokens = doc.tokens
    return [f"{tokens[v].surface!r} (global index {v})" for v in nodes]


def subword_index(node_subwords, names=None) -> tuple[np.ndarray, np.ndarray]:
    """Padded id matrix and averaging weights for a list of subword-id lists."""
    width = max((len(s) for s in node_subwords), default=1) or 1
    ids = np.zeros((len(node_subwords), width), dtype=np.int64)
    weights = np.zeros((len(node_subwords), width))
    for i, sub in enumerate(node_subwords):
        if not sub:
            who = names[i] if names is not None else f"node {i}"
            raise KeyError(f"no subword mapping for token {who}")
        ids[i, : len(sub)] = sub
        weights[i, : len(sub)] = 1.0 / len(sub)
    return ids, weights


def embed_nodes(table: Tensor, ids: np.ndarray, weights: np.ndarray) -> Tensor:
    rows = ad.embedding(table, ids)  # [..., L, K, d]
    return (rows * weights[..., None]).sum(axis=-2)


def gcn_direction_pass(h: Tensor, prop, weight: Tensor, bias: Tensor) -> Tensor:
    """``sigmoid(P (H W + B))`` for one edge direction; ``P`` is pre-normalized."""
    h = ad.as_tensor(h)
    if h.shape[-1] != weight.shape[0]:
        raise ad.ShapeError(f"gcn pass: node features {h.shape} vs weight {weight.shape}")
    prop = np.asarray(prop, dtype=np.float64)
    if prop.shape[-1] != h.shape[-2] or prop.shape[-2] != h.shape[-2]:
        raise ad.ShapeError(f"gcn pass: propagation {prop.shape} vs node features {h.shape}")
    return ad.sigmoid(ad.matmul(prop, h @ weight + bias))


def aggregate_directions(
    h: Tensor,
    directional: list[Tensor],
    mode: Aggregation = Aggregation.TYPE_ATTENTION,
    gate_weights: list[tuple[Tensor, Tensor]] | None = None,
) -> Tensor:
    if len(directional) != 3:
        raise ValueError(f"expected in/out/self outputs, got {len(directional)}")
    stacked = ad.stack(directional, axis=-2)  # [..., L, 3, d]
    if mode is Aggregation.TYPE_ATTENTION:
        d = h.shape[-1]
        scores = (stacked * ad.reshape(h, h.shape[:-1] + (1, d))).sum(axis=-1)
        alpha = ad.softmax(scores * (1.0 / math.sqrt(d)), axis=-1)  # [..., L, 3]
        return (stacked * ad.reshape(alpha, alpha.shape + (1,))).sum(axis=-2)
    if gate_weights is None:
        raise ValueError("gating aggregation needs gate weights")
    gates = [ad.sigmoid(x @ w + b) for x, (w, b) in zip(directional, gate_weights)]
    total = gates[0] + gates[1] + gates[2]
    mixed = directional[0] * gates[0] + directional[1] * gates[1] + directional[2] * gates[2]
    return mixed / total


class GraphEncoder:
    """Stacked direction-typed GCN layers.  Parameters are Stage 2."""

    def __init__(self, prefix: str, config: GraphEncoderConfig, rng: np.random.Generator):
        self.config = config
        d = config.hidden_size
        bound = math.sqrt(6.0 / (2 * d))
        self.layers = []
        for layer in range(config.num_layers):
            p = {}
            for t in EdgeDirection:
                name = t.name.lower()
                p[f"W_{name}"] = Parameter(
                    f"{prefix}.layer{layer}.W_{name}", rng.uniform(-bound, bound, (d, d)), Stage.STAGE2
                )
                p[f"B_{name}"] = Parameter(
                    f"{prefix}.layer{layer}.B_{name}", np.zeros(d), Stage.STAGE2
                )
                if config.aggregation is Aggregation.GATING_UNITS:
                    p[f"gate_{name}"] = Parameter(
                        f"{prefix}.layer{layer}.gate_{name}",
                        rng.uniform(-bound, bound, (d, 1)),
                        Stage.STAGE2,
                    )
                    p[f"gate_bias_{name}"] = Parameter(
                        f"{prefix}.layer{layer}.gate_bias_{name}", np.zeros(1), Stage.STAGE2
                    )
            self.layers.append(p)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.values()]

    def __call__(
        self,
        h0: Tensor,
        prop: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Encode node features ``h0 [..., L, d]`` with propagation ``prop [..., 3, L, L]``."""
        h = h0
        for p in self.layers:
            outs = []
            for t in EdgeDirection:
                name = t.name.lower()
                w, b = p[f"W_{name}"], p[f"B_{name}"]
                if t is EdgeDirection.SELF:
                    outs.append(ad.sigmoid(h @ w + b))
                else:
                    outs.append(gcn_direction_pass(h, prop[..., int(t), :, :], w, b))
            gates = None
            if self.config.aggregation is Aggregation.GATING_UNITS:
                gates = [(p[f"gate_{t.name.lower()}"], p[f"gate_bias_{t.name.lower()}"])
                         for t in EdgeDirection]
            h = aggregate_directions(h, outs, self.config.aggregation, gates)
            h = ad.dropout(h, self.config.dropout, training, rng)
        return h


def encode_graph(
    graph: DocumentGraph,
    doc: AnnotatedDocument,
    config: GraphEncoderConfig,
    params: GraphEncoder,
    embedding_table: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> GraphRepresentation:
    """Encode one (pruned) graph of ``doc`` into ``[L, d]`` node representations."""
    if params.config != config:
        raise ValueError("parameter set was built for a different encoder config")
    h0 = init_node_embeddings(doc, graph.nodes, embedding_table)
    prop = propagation_matrices(graph).stacked()
    return GraphRepresentation(params(h0, prop, training, rng), graph.index())
