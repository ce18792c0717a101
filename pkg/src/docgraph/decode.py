"""Beam search with length penalty and document-order translation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import EMPTY_CONTEXT, ContextScope, Example, GraphContext, collate, graph_context
from .graph import DocumentGraph, RelationType, build_document_graph
from .model import ContextBundle, DocGraphModel
from .tokenize import EOS_ID, AnnotatedDocument, BpeModel, make_document

# relations available on the target side when only surface text exists
TARGET_RELATIONS = frozenset({RelationType.ADJACENCY, RelationType.LEXICAL})


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


@dataclass(frozen=True)
class DecodeHypothesis:
    """Token ids (EOS included once finished) and their summed log-probability."""

    tokens: tuple[int, ...]
    logp: float
    finished: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    def score(self, alpha: float) -> float:
        return self.logp / length_penalty(len(self.tokens), alpha)

    def extend(self, token: int, logp: float, eos: int, force: bool = False) -> "DecodeHypothesis":
        if self.finished:
            raise ValueError("finished hypotheses are not extended")
        return DecodeHypothesis(self.tokens + (token,), self.logp + logp, force or token == eos)

    def output(self, eos: int = EOS_ID) -> list[int]:
        """Tokens without the terminating EOS."""
        toks = list(self.tokens)
        if toks and toks[-1] == eos and self.finished:
            toks.pop()
        return toks


StepFn = Callable[[Sequence[tuple[int, ...]]], np.ndarray]


def _rank_key(h: DecodeHypothesis):
    return (-h.logp, h.tokens)


def beam_search_core(
    step_fn: StepFn,
    beam: int,
    alpha: float,
    max_len: int,
    eos: int = EOS_ID,
) -> list[DecodeHypothesis]:
    """Finished hypotheses, best first, under score ``logp / lp(|Y|)``.

    ``step_fn`` maps a list of prefixes to a ``[n, V]`` array of next-token
    log-probabilities.  Every live hypothesis proposes its ``beam`` most
    likely continuations; proposals ending in ``eos`` join the finished pool
    and the ``beam`` best unfinished proposals stay alive.  A hypothesis that
    reaches ``max_len`` tokens is force-finished.  The search also stops once
    no live hypothesis can still overtake the best finished score.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    alive = [DecodeHypothesis((), 0.0)]
    finished: list[DecodeHypothesis] = []
    for t in range(max_len):
        rows = np.asarray(step_fn([h.tokens for h in alive]), dtype=np.float64)
        last = t == max_len - 1
        proposals = []
        for h, row in zip(alive, rows):
            for v in np.argsort(-row, kind="stable")[:beam]:
                proposals.append(h.extend(int(v), float(row[v]), eos, force=last))
        finished += [p for p in proposals if p.finished]
        alive = sorted((p for p in proposals if not p.finished), key=_rank_key)[:beam]
        if not alive:
            break
        if finished:
            # logp only falls and lp is monotone in length, so this bounds every continuation
            best = max(f.score(alpha) for f in finished)
            lp_max = max(length_penalty(t + 2, alpha), length_penalty(max_len, alpha))
            if all(best > h.logp / lp_max for h in alive):
                break
    return sorted(finished, key=lambda h: (-h.score(alpha), h.tokens))


def greedy_core(step_fn: StepFn, max_len: int, eos: int = EOS_ID) -> DecodeHypothesis:
    h = DecodeHypothesis((), 0.0)
    for t in range(max_len):
        row = np.asarray(step_fn([h.tokens]), dtype=np.float64)[0]
        v = int(np.argmax(row))
        h = h.extend(v, float(row[v]), eos, force=t == max_len - 1)
        if h.finished:
            break
    return h


def exhaustive_search(table: np.ndarray, alpha: float, eos: int = EOS_ID) -> DecodeHypothesis:
    """Best sequence under a position-indexed log-probability table ``[T, V]``.

    Enumerates every EOS-terminated sequence shorter than ``T`` and every
    length-``T`` sequence, matching the force-finish rule of the beam.
    """
    table = np.asarray(table, dtype=np.float64)
    cap, vocab = table.shape
    best = None

    def visit(prefix, logp):
        nonlocal best
        t = len(prefix)
        for v in range(vocab):
            h = DecodeHypothesis(prefix + (v,), logp + table[t, v], v == eos or t == cap - 1)
            if h.finished:
                if best is None or (-h.score(alpha), h.tokens) < (-best.score(alpha), best.tokens):
                    best = h
            else:
                visit(h.tokens, h.logp)

    visit((), 0.0)
    return best


def table_step_fn(table: np.ndarray) -> StepFn:
    """Step function whose distribution depends only on the position."""
    table = np.asarray(table, dtype=np.float64)
    return lambda prefixes: np.stack([table[len(p)] for p in prefixes])


# ---------------------------------------------------------------------------
# model decoding


def default_max_len(src_len: int, model: DocGraphModel | None = None) -> int:
    cap = 2 * src_len + 10
    if model is not None:
        cap = min(cap, model.config.max_len - 1)
    return cap


def _tile(ctx: ContextBundle, n: int) -> ContextBundle:
    def rep(x):
        if x is None:
            return None
        if isinstance(x, Tensor):
            return Tensor(np.repeat(x.data, n, axis=0))
        return np.repeat(x, n, axis=0)

    return ContextBundle(*(rep(getattr(ctx, f)) for f in ContextBundle.__dataclass_fields__))


def model_step_fn(
    model: DocGraphModel,
    src: Sequence[int],
    src_ctx: GraphContext | None = None,
    tgt_ctx: GraphContext | None = None,
) -> StepFn:
    """Encode once, then score prefixes by re-running the decoder."""
    cfg = model.config
    model._check_document_level()
    batch = collate(
        [Example(list(src), [], src_ctx, tgt_ctx)],
        cfg.context_scope,
        cfg.use_src_graph,
        cfg.use_tgt_graph,
    )
    with ad.no_grad():
        ctx = model.encode_context(batch)
        memory = model.encode(batch.src, batch.src_mask, ctx).data

    def step(prefixes):
        n = len(prefixes)
        width = max(len(p) for p in prefixes) + 1
        tgt_in = np.zeros((n, width), dtype=np.int64)
        lengths = np.empty(n, dtype=np.int64)
        for i, p in enumerate(prefixes):
            tgt_in[i, 0] = 1  # BOS
            tgt_in[i, 1 : len(p) + 1] = p
            lengths[i] = len(p)
        with ad.no_grad():
            lp = model.decode(
                tgt_in,
                Tensor(np.repeat(memory, n, axis=0)),
                np.repeat(batch.src_mask, n, axis=0),
                _tile(ctx, n),
            ).data
        return lp[np.arange(n), lengths]

    return step


def beam_search(
    model: DocGraphModel,
    src: Sequence[int],
    src_ctx: GraphContext | None = None,
    tgt_ctx: GraphContext | None = None,
    beam: int = 4,
    alpha: float = 0.6,
    max_len: int | None = None,
) -> list[int]:
    """Best target token ids (no EOS) for one source sentence."""
    cap = default_max_len(len(src), model) if max_len is None else max_len
    hyps = beam_search_core(model_step_fn(model, src, src_ctx, tgt_ctx), beam, alpha, cap)
    return hyps[0].output()


def greedy_decode(model, src, src_ctx=None, tgt_ctx=None, max_len=None) -> list[int]:
    cap = default_max_len(len(src), model) if max_len is None else max_len
    return greedy_core(model_step_fn(model, src, src_ctx, tgt_ctx), cap).output()


# ---------------------------------------------------------------------------
# documents


class TargetMode(enum.Enum):
    TGT = "tgt"
    TGT_PREV = "tgt-prev"
    NO_TGT = "no-tgt"


def sentence_ids(doc: AnnotatedDocument, m: int) -> list[int]:
    return [i for t in doc.sentences[m] for i in doc.subword_map[t.global_index]]


def target_document(doc_id: str, sentences: Sequence[Sequence[str]], bpe: BpeModel) -> AnnotatedDocument:
    """Unannotated target-side document built from surface words."""
    return make_document(doc_id, [list(s) for s in sentences], bpe)


def target_graph(doc: AnnotatedDocument, relations=TARGET_RELATIONS) -> DocumentGraph:
    return build_document_graph(doc, relations)


def document_contexts(
    doc: AnnotatedDocument, graph: DocumentGraph | None = None, radius: int = 2
) -> list[GraphContext]:
    """One pruned graph context per sentence."""
    if graph is None:
        graph = build_document_graph(doc)
    return [graph_context(graph, doc, m, radius) for m in range(len(doc.sentences))]


def previous_context(
    translations: Sequence[Sequence[str]], bpe: BpeModel, doc_id: str, radius: int = 2,
    relations=TARGET_RELATIONS,
) -> GraphContext:
    """Target graph over already translated sentences, anchored on the last one."""
    if not translations:
        return EMPTY_CONTEXT
    tdoc = target_document(doc_id, translations, bpe)
    return graph_context(target_graph(tdoc, relations), tdoc, len(translations) - 1, radius)


@dataclass
class DocumentTranslation:
    doc_id: str
    ids: list[list[int]] = field(default_factory=list)
    words: list[list[str]] = field(default_factory=list)


def translate_document(
    model: DocGraphModel,
    doc: AnnotatedDocument,
    mode: TargetMode = TargetMode.TGT,
    tgt_bpe: BpeModel | None = None,
    src_graph: DocumentGraph | None = None,
    tgt_contexts: Sequence[GraphContext] | None = None,
    beam: int = 4,
    alpha: float = 0.6,
) -> DocumentTranslation:
    """Translate sentences in document order.

    ``tgt_contexts`` (one per sentence, from a pseudo-target document) is
    required in ``TGT`` mode; ``TGT_PREV`` rebuilds the target graph from the
    model's own translations of the preceding sentences and needs ``tgt_bpe``.
    """
    mode = TargetMode(mode)
    cfg = model.config
    if mode is TargetMode.NO_TGT and cfg.use_tgt_graph:
        model = model.with_config(use_tgt_graph=False)
        cfg = model.config
    wants_tgt = cfg.use_tgt_graph
    if wants_tgt and mode is TargetMode.TGT and (
        tgt_contexts is None or len(tgt_contexts) != len(doc.sentences)
    ):
        raise ValueError(f"{doc.doc_id}: Tgt mode needs one target graph context per sentence")
    if wants_tgt and mode is TargetMode.TGT_PREV and tgt_bpe is None:
        raise ValueError(f"{doc.doc_id}: TgtPrev mode needs the target BPE model")
    src_ctxs = document_contexts(doc, src_graph, cfg.radius) if cfg.use_src_graph else None
    out = DocumentTranslation(doc.doc_id)
    for m in range(len(doc.sentences)):
        tctx = None
        if wants_tgt:
            if mode is TargetMode.TGT:
                tctx = tgt_contexts[m]
            else:
                tctx = previous_context(out.words, tgt_bpe, doc.doc_id, cfg.radius)
        ids = beam_search(
            model, sentence_ids(doc, m), src_ctxs[m] if src_ctxs else None, tctx, beam, alpha
        )
        out.ids.append(ids)
        out.words.append(tgt_bpe.decode(ids) if tgt_bpe is not None else [str(i) for i in ids])
    return out
