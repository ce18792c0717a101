"""Grid runs over relation subsets, integration topologies and graph sides."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bleu import bleu
from .decode import TargetMode, translate_document
from .graph import ALL_RELATIONS, RelationType, build_document_graph
from .model import Architecture
from .synthetic import Probe
from .training import (
    Checkpoint,
    ParallelDocument,
    PseudoTarget,
    TrainConfig,
    TrainLog,
    train_stage2,
)


class Sides(enum.Enum):
    SRC = "src"
    SRC_TGT = "src+tgt"
    SRC_TGT_PREV = "src+tgt-prev"

    @property
    def uses_target(self) -> bool:
        return self is not Sides.SRC

    @property
    def mode(self) -> TargetMode:
        return {
            Sides.SRC: TargetMode.NO_TGT,
            Sides.SRC_TGT: TargetMode.TGT,
            Sides.SRC_TGT_PREV: TargetMode.TGT_PREV,
        }[self]


def parse_relations(spec: str) -> frozenset:
    """``all`` or ``+``-joined relation names, e.g. ``adjacency+lexical``."""
    spec = spec.strip().lower()
    if spec == "all":
        return ALL_RELATIONS
    try:
        return frozenset(RelationType(part.strip()) for part in spec.split("+"))
    except ValueError as e:
        raise ValueError(f"unknown relation in {spec!r}") from e


def relations_name(relations) -> str:
    if frozenset(relations) == ALL_RELATIONS:
        return "all"
    order = list(RelationType)
    return "+".join(r.value for r in sorted(relations, key=order.index))


@dataclass(frozen=True)
class AblationGrid:
    relations: tuple = (ALL_RELATIONS,)
    architectures: tuple = (Architecture.HYBRID,)
    sides: tuple = (Sides.SRC_TGT,)

    def cells(self):
        for rel in self.relations:
            for arch in self.architectures:
                for side in self.sides:
                    yield rel, arch, side

    def __len__(self) -> int:
        return len(self.relations) * len(self.architectures) * len(self.sides)

    @classmethod
    def from_strings(cls, relations: str = "all", architectures: str = "hybrid", sides: str = "src+tgt"):
        split = lambda s: [p for p in (x.strip() for x in s.replace(";", ",").split(",")) if p]  # noqa: E731
        return cls(
            tuple(parse_relations(r) for r in split(relations)),
            tuple(Architecture(a.lower()) for a in split(architectures)),
            tuple(Sides(s.lower()) for s in split(sides)),
        )


FIELDS = [
    "relations", "architecture", "sides", "edges", "steps",
    "final_loss", "finite_loss", "bleu", "probe_accuracy",
]


@dataclass
class AblationRow:
    relations: str
    architecture: str
    sides: str
    edges: int
    steps: int
    final_loss: float
    finite_loss: bool
    bleu: float
    probe_accuracy: float | None = None

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in FIELDS}
        d["final_loss"] = f"{self.final_loss:.4f}"
        d["bleu"] = f"{self.bleu:.2f}"
        d["probe_accuracy"] = "" if self.probe_accuracy is None else f"{self.probe_accuracy:.4f}"
        return d


def probe_accuracy(translations, probes: Sequence[Probe]) -> float:
    """Decoded word at each probe position equals the reference sense."""
    hits = 0
    for p in probes:
        words = translations[p.doc_index].words[p.sentence_index]
        hits += p.target_position < len(words) and words[p.target_position] == p.correct
    return hits / len(probes) if probes else float("nan")


def run_cell(
    stage1: Checkpoint,
    train: Sequence[ParallelDocument],
    held: Sequence[ParallelDocument],
    pseudo_train: Sequence[PseudoTarget],
    pseudo_held: Sequence[PseudoTarget],
    relations,
    architecture: Architecture,
    sides: Sides,
    config: TrainConfig,
    probes: Sequence[Probe] = (),
    beam: int = 4,
    alpha: float = 0.6,
) -> AblationRow:
    graphs = [build_document_graph(d.src, relations) for d in train]
    log = TrainLog()
    ck = train_stage2(
        stage1, train, graphs, pseudo_train if sides.uses_target else None, config, log,
        architecture=architecture, use_src_graph=True, use_tgt_graph=sides.uses_target,
    )
    losses = [row[1] for row in log.rows]
    model = ck.build_model()
    outputs = []
    for k, d in enumerate(held):
        outputs.append(translate_document(
            model, d.src, sides.mode, stage1.bpe_tgt,
            src_graph=build_document_graph(d.src, relations),
            tgt_contexts=pseudo_held[k].contexts if sides is Sides.SRC_TGT else None,
            beam=beam, alpha=alpha,
        ))
    hyps = [s for out in outputs for s in out.words]
    refs = [[t.surface for t in sent] for d in held for sent in d.tgt.sentences]
    tail = losses[-10:]
    return AblationRow(
        relations_name(relations),
        architecture.value,
        sides.value,
        sum(len(g.edges) for g in graphs),
        len(losses),
        float(np.mean(tail)) if tail else float("nan"),
        bool(losses) and all(math.isfinite(x) for x in losses),
        bleu(hyps, refs).score,
        probe_accuracy(outputs, probes) if probes else None,
    )


def run_ablation(
    grid: AblationGrid,
    stage1: Checkpoint,
    train: Sequence[ParallelDocument],
    held: Sequence[ParallelDocument],
    pseudo_train: Sequence[PseudoTarget],
    pseudo_held: Sequence[PseudoTarget],
    config: TrainConfig,
    probes: Sequence[Probe] = (),
    beam: int = 4,
    alpha: float = 0.6,
    progress=None,
) -> list[AblationRow]:
    """One stage-2 training and evaluation per grid cell, in grid order."""
    rows = []
    for rel, arch, side in grid.cells():
        row = run_cell(stage1, train, held, pseudo_train, pseudo_held, rel, arch, side,
                       config, probes, beam, alpha)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def rows_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())
    return buf.getvalue()
