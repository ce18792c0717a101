"""Per-sentence training examples and padded batches."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import DocumentGraph, propagation_matrices, prune_to_radius, sentence_nodes
from .tokenize import BOS_ID, EOS_ID, PAD_ID, AnnotatedDocument


class ContextScope(enum.Enum):
    ALL = "all"
    RELATED = "related"
    CURRENT = "current"


@dataclass(frozen=True)
class GraphContext:
    """A pruned graph around one sentence, ready for the graph encoder."""

    nodes: tuple[int, ...]
    node_subwords: tuple[tuple[int, ...], ...]
    prop: np.ndarray  # [3, L, L]
    current: np.ndarray  # bool [L]
    related: np.ndarray  # bool [L]

    @property
    def size(self) -> int:
        return len(self.nodes)

    def scope_mask(self, scope: ContextScope) -> np.ndarray:
        if scope is ContextScope.CURRENT:
            return self.current
        if scope is ContextScope.RELATED:
            return self.related
        return np.ones(self.size, dtype=bool)


EMPTY_CONTEXT = GraphContext((), (), np.zeros((3, 0, 0)), np.zeros(0, bool), np.zeros(0, bool))


def graph_context(
    graph: DocumentGraph,
    doc: AnnotatedDocument,
    sentence_index: int,
    radius: int = 2,
) -> GraphContext:
    if len(doc) == 0 or not doc.sentences[sentence_index]:
        return EMPTY_CONTEXT
    sub, remap = prune_to_radius(graph, doc, sentence_index, radius)
    current_ids = sentence_nodes(doc, sentence_index)
    current = np.zeros(sub.node_count, dtype=bool)
    current[[remap[v] for v in current_ids]] = True
    related = current.copy()
    for u, v, _ in sub.edges:
        if current[remap[u]]:
            related[remap[v]] = True
        if current[remap[v]]:
            related[remap[u]] = True
    return GraphContext(
        sub.nodes,
        tuple(tuple(doc.subword_map[v]) for v in sub.nodes),
        propagation_matrices(sub).stacked(),
        current,
        related,
    )


@dataclass
class Example:
    src: list[int]
    tgt: list[int]
    src_ctx: GraphContext | None = None
    tgt_ctx: GraphContext | None = None
    doc_index: int = 0
    sentence_index: int = 0

    @property
    def num_tokens(self) -> int:
        return len(self.src) + len(self.tgt) + 1


@dataclass
class GraphBatch:
    sub_ids: np.ndarray  # [B, L, K] int
    sub_weights: np.ndarray  # [B, L, K]
    prop: np.ndarray  # [B, 3, L, L]
    scope: np.ndarray  # bool [B, L]
    has_nodes: np.ndarray  # bool [B]


@dataclass
class Batch:
    src: np.ndarray  # [B, S]
    src_mask: np.ndarray  # bool [B, S]
    tgt_in: np.ndarray  # [B, T]
    tgt_out: np.ndarray  # [B, T]
    tgt_mask: np.ndarray  # bool [B, T]
    src_graph: GraphBatch | None = None
    tgt_graph: GraphBatch | None = None

    @property
    def size(self) -> int:
        return self.src.shape[0]


def pad_ids(seqs: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0) if width is None else width
    out = np.full((len(seqs), max(width, 1)), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def collate_graphs(contexts: Sequence[GraphContext | None], scope: ContextScope) -> GraphBatch:
    contexts = [c if c is not None else EMPTY_CONTEXT for c in contexts]
    b = len(contexts)
    width = max(1, max(c.size for c in contexts))
    k = max(1, max((len(s) for c in contexts for s in c.node_subwords), default=1))
    ids = np.full((b, width, k), PAD_ID, dtype=np.int64)
    weights = np.zeros((b, width, k))
    prop = np.zeros((b, 3, width, width))
    prop[:, 2] = np.eye(width)
    scope_mask = np.zeros((b, width), dtype=bool)
    for i, c in enumerate(contexts):
        n = c.size
        for j, sub in enumerate(c.node_subwords):
            ids[i, j, : len(sub)] = sub
            weights[i, j, : len(sub)] = 1.0 / len(sub)
        prop[i, :, :n, :n] = c.prop
        scope_mask[i, :n] = c.scope_mask(scope)
    return GraphBatch(ids, weights, prop, scope_mask, scope_mask.any(axis=1))


def collate(
    examples: Sequence[Example],
    scope: ContextScope = ContextScope.CURRENT,
    use_src_graph: bool = True,
    use_tgt_graph: bool = True,
) -> Batch:
    src = pad_ids([e.src for e in examples])
    tgt_in = pad_ids([[BOS_ID] + list(e.tgt) for e in examples])
    tgt_out = pad_ids([list(e.tgt) + [EOS_ID] for e in examples])
    return Batch(
        src=src,
        src_mask=src != PAD_ID,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_mask=tgt_out != PAD_ID,
        src_graph=collate_graphs([e.src_ctx for e in examples], scope) if use_src_graph else None,
        tgt_graph=collate_graphs([e.tgt_ctx for e in examples], scope) if use_tgt_graph else None,
    )


def token_batches(examples: Sequence[Example], max_tokens: int) -> list[list[Example]]:
    """Greedy packing in the given order under a per-batch token budget."""
    batches, current, used = [], [], 0
    for e in examples:
        if current and used + e.num_tokens > max_tokens:
            batches.append(current)
            current, used = [], 0
        current.append(e)
        used += e.num_tokens
    if current:
        batches.append(current)
    return batches
