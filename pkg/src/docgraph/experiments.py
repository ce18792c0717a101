"""Disambiguation experiment: stage-1 vs stage-2 on the synthetic cue task."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import collate
from .model import DocGraphModel, ModelConfig
from .synthetic import Probe, SyntheticCorpus, all_sentences, disambiguation_corpus, parallel_documents, vocabulary_bpe
from .training import (
    Checkpoint,
    ParallelDocument,
    PseudoTarget,
    TrainConfig,
    generate_pseudo_targets,
    source_graphs,
    stage2_examples,
    train_stage1,
    train_stage2,
)


def contrastive_accuracy(
    model: DocGraphModel,
    docs: Sequence[ParallelDocument],
    probes: Sequence[Probe],
    bpe_tgt,
    src_graphs=None,
    pseudo: Sequence[PseudoTarget] | None = None,
    batch_size: int = 64,
) -> float:
    """Share of probes where the reference outscores its sense-swapped twin.

    Both target sentences differ only in the probed word, so the comparison
    isolates how the model translates that one token.  Ties count as wrong.
    """
    if not probes:
        raise ValueError("no probes")
    grouped = stage2_examples(docs, model.config, src_graphs, pseudo)
    pairs = []
    for p in probes:
        ex = grouped[p.doc_index][p.sentence_index]
        tgt_doc = docs[p.doc_index].tgt
        words = [t.surface for t in tgt_doc.sentences[p.sentence_index]]
        if words[p.target_position] != p.correct:
            raise ValueError(f"probe does not match reference at doc {p.doc_index}")
        pairs.append(ex)
        pairs.append(replace(ex, tgt=_swap(ex.tgt, tgt_doc, p, bpe_tgt)))
    scores = []
    cfg = model.config
    with ad.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i : i + batch_size]
            batch = collate(chunk, cfg.context_scope, cfg.use_src_graph, cfg.use_tgt_graph)
            logp = model(batch).data
            tok = np.take_along_axis(logp, batch.tgt_out[..., None], axis=-1)[..., 0]
            scores.extend((tok * batch.tgt_mask).sum(axis=1))
    scores = np.asarray(scores).reshape(-1, 2)
    return float(np.mean(scores[:, 0] > scores[:, 1]))


def _swap(ids, tgt_doc, probe: Probe, bpe) -> list[int]:
    """Replace the probed word's subwords with those of the wrong sense."""
    sent = tgt_doc.sentences[probe.sentence_index]
    start = sum(len(tgt_doc.subword_map[t.global_index]) for t in sent[: probe.target_position])
    width = len(tgt_doc.subword_map[sent[probe.target_position].global_index])
    wrong = bpe.encode_word(probe.wrong)
    return list(ids[:start]) + wrong + list(ids[start + width :])


@dataclass
class DisambiguationResult:
    seed: int
    stage1_accuracy: float
    stage2_accuracy: float

    @property
    def margin(self) -> float:
        return self.stage2_accuracy - self.stage1_accuracy


# Desk-scale settings for the disambiguation run.  The task needs a single
# lexical hop, and every extra sigmoid GCN layer shrinks the spread between
# node representations roughly fourfold, so one graph layer is used.  The
# graph attention starts from scratch and only becomes selective after its
# query/key weights have grown; at a tenth of the stage-1 rate that takes far
# longer than the budget allows, hence the explicit stage-2 rate.
DESK_MODEL = {"graph_layers": 1}
DESK_STAGE1 = TrainConfig(learning_rate=5e-3, warmup_steps=100, max_tokens=512, max_steps=600)
DESK_STAGE2 = DESK_STAGE1.for_stage2(learning_rate=5e-3, max_steps=2500)


def run_disambiguation(
    seed: int,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    stage2_config: TrainConfig | None = None,
    train_docs: int = 300,
    test_docs: int = 100,
    beam: int = 1,
    log=None,
) -> DisambiguationResult:
    """Train both stages on fresh synthetic data and score held-out probes.

    Without explicit configs the ``DESK_*`` settings are used.
    """
    train = disambiguation_corpus(train_docs, seed=1000 + seed)
    test = disambiguation_corpus(test_docs, seed=2000 + seed)
    bpe_src = vocabulary_bpe(all_sentences(train.src + test.src))
    bpe_tgt = vocabulary_bpe(all_sentences(train.tgt + test.tgt))
    docs = parallel_documents(train, bpe_src, bpe_tgt, "train")
    held = parallel_documents(test, bpe_src, bpe_tgt, "test")
    model_config = model_config or ModelConfig(len(bpe_src), len(bpe_tgt), **DESK_MODEL)
    model_config = replace(model_config, src_vocab=len(bpe_src), tgt_vocab=len(bpe_tgt))
    train_config = replace(train_config or DESK_STAGE1, seed=seed)
    s2 = replace(stage2_config or DESK_STAGE2, seed=seed)

    ck1 = train_stage1(docs, model_config, train_config, bpe_src, bpe_tgt, log=log)
    m1 = ck1.build_model()
    acc1 = contrastive_accuracy(m1, held, test.probes, bpe_tgt)

    graphs, held_graphs = source_graphs(docs), source_graphs(held)
    pseudo = generate_pseudo_targets(ck1, [d.src for d in docs], beam=beam)
    held_pseudo = generate_pseudo_targets(ck1, [d.src for d in held], beam=beam)
    ck2 = train_stage2(ck1, docs, graphs, pseudo, s2, log=log)
    m2 = ck2.build_model()
    acc2 = contrastive_accuracy(m2, held, test.probes, bpe_tgt, held_graphs, held_pseudo)
    return DisambiguationResult(seed, acc1, acc2)
