"""Two-stage training: sentence-level model first, then graph context on top."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Stage
from .data import ContextScope, Example, GraphContext, collate, token_batches
from .decode import (
    TARGET_RELATIONS,
    beam_search,
    document_contexts,
    sentence_ids,
    target_document,
    target_graph,
)
from .graph import ALL_RELATIONS, DocumentGraph, build_document_graph
from .model import DocGraphModel, ModelConfig, _coerce, sequence_loss
from .tokenize import AnnotatedDocument, BpeModel

# ---------------------------------------------------------------------------
# configuration and corpus


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    learning_rate: float = 2e-3  # peak, reached at the end of warmup
    warmup_steps: int = 100
    max_tokens: int = 512  # per batch, source + target
    max_steps: int = 500
    seed: int = 0
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.warmup_steps < 1 or self.max_tokens < 1:
            raise ValueError("warmup_steps and max_tokens must be positive")

    def for_stage2(
        self,
        learning_rate: float | None = None,
        max_tokens: int | None = None,
        max_steps: int | None = None,
    ) -> "TrainConfig":
        """Stage-2 settings: a tenth of the learning rate and half the batch unless overridden."""
        return replace(
            self,
            stage=2,
            learning_rate=self.learning_rate / 10 if learning_rate is None else learning_rate,
            max_tokens=max(1, self.max_tokens // 2) if max_tokens is None else max_tokens,
            max_steps=self.max_steps if max_steps is None else max_steps,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class ParallelDocument:
    src: AnnotatedDocument
    tgt: AnnotatedDocument

    def __post_init__(self):
        if len(self.src.sentences) != len(self.tgt.sentences):
            raise ValueError(
                f"{self.src.doc_id}: {len(self.src.sentences)} source vs "
                f"{len(self.tgt.sentences)} target sentences"
            )


def sentence_examples(docs: Sequence[ParallelDocument]) -> list[list[Example]]:
    """Examples grouped per document, without graph context."""
    return [
        [
            Example(sentence_ids(d.src, m), sentence_ids(d.tgt, m), doc_index=k, sentence_index=m)
            for m in range(len(d.src.sentences))
        ]
        for k, d in enumerate(docs)
    ]


def attach_contexts(
    grouped: list[list[Example]],
    src_contexts: Sequence[Sequence[GraphContext]] | None,
    tgt_contexts: Sequence[Sequence[GraphContext]] | None,
) -> list[list[Example]]:
    out = []
    for k, exs in enumerate(grouped):
        row = []
        for m, e in enumerate(exs):
            row.append(replace(
                e,
                src_ctx=src_contexts[k][m] if src_contexts is not None else None,
                tgt_ctx=tgt_contexts[k][m] if tgt_contexts is not None else None,
            ))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# optimisation


def inverse_sqrt_lr(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` at ``warmup``, then decay with ``1/sqrt(step)``."""
    step = max(step, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if not p.requires_grad or p.grad is None:
                continue
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   8 bytes magic | u32 version | u32 n + n bytes UTF-8 JSON config block |
#   u32 record count | records: u32 name length, name, u32 rank, rank x u32 dims,
#   float32 payload in row-major order

MAGIC = b"DGNMTCK\x00"
FORMAT_VERSION = 1
OPTIM_PREFIX = "@optim."


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    stage: int
    params: dict[str, np.ndarray]  # float32
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)  # "m.<name>", "v.<name>"
    meta: dict = field(default_factory=dict)  # seed, step, train config
    bpe_src: BpeModel | None = None
    bpe_tgt: BpeModel | None = None

    @property
    def seed(self) -> int:
        return int(self.meta.get("seed", 0))

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    def build_model(self) -> DocGraphModel:
        model = DocGraphModel(self.config, seed=self.seed, document_level=self.stage == 2)
        model.load_state_dict({k: v.astype(np.float64) for k, v in self.params.items()})
        return model

    # -- serialization -------------------------------------------------------

    def _header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "stage": self.stage,
            "meta": self.meta,
            "bpe_src": self.bpe_src.to_dict() if self.bpe_src is not None else None,
            "bpe_tgt": self.bpe_tgt.to_dict() if self.bpe_tgt is not None else None,
        }

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        header = json.dumps(self._header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(MAGIC)
        buf.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        buf.write(header)
        records = list(self.params.items())
        records += [(OPTIM_PREFIX + k, v) for k, v in self.optimizer.items()]
        buf.write(struct.pack("<I", len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f4")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            buf.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            buf.write(np.ascontiguousarray(arr).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        if bytes(view[:8]) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = 8

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(view):
                raise CheckpointError("truncated checkpoint")
            out = struct.unpack_from(fmt, view, pos)
            pos += size
            return out

        version, hlen = take("<II")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(bytes(view[pos : pos + hlen]).decode("utf-8"))
        pos += hlen
        (count,) = take("<I")
        params, optim = {}, {}
        for _ in range(count):
            (nlen,) = take("<I")
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            (rank,) = take("<I")
            dims = take(f"<{rank}I") if rank else ()
            n = int(np.prod(dims)) if rank else 1
            if pos + 4 * n > len(view):
                raise CheckpointError(f"truncated payload for {name!r}")
            arr = np.frombuffer(view, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
            pos += 4 * n
            if name.startswith(OPTIM_PREFIX):
                optim[name[len(OPTIM_PREFIX):]] = arr
            else:
                params[name] = arr
        if pos != len(view):
            raise CheckpointError(f"{len(view) - pos} trailing bytes after the last record")
        bpe = lambda d: BpeModel.from_dict(d) if d is not None else None  # noqa: E731
        return cls(
            ModelConfig.from_dict(header["config"]),
            int(header["stage"]),
            params,
            optim,
            header.get("meta", {}),
            bpe(header.get("bpe_src")),
            bpe(header.get("bpe_tgt")),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# training loop


class TrainLog:
    """CSV rows ``step,loss,lr``; optionally mirrored to a text stream."""

    def __init__(self, stream: IO[str] | None = None):
        self.rows: list[tuple[int, float, float]] = []
        self.stream = stream
        if stream is not None:
            stream.write("step,loss,lr\n")

    def add(self, step: int, loss: float, lr: float) -> None:
        self.rows.append((step, loss, lr))
        if self.stream is not None:
            self.stream.write(f"{step},{loss:.6f},{lr:.6g}\n")
            self.stream.flush()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "lr"])
        for step, loss, lr in self.rows:
            w.writerow([step, f"{loss:.6f}", f"{lr:.6g}"])
        return buf.getvalue()


def _snap32(a: np.ndarray) -> None:
    a[...] = a.astype(np.float32)


class Trainer:
    """Owns the optimiser state and the deterministic data order.

    Batches of epoch ``e`` come from shuffling documents with ``(seed, e)``;
    dropout at step ``s`` draws from ``(seed, s)``.  Resuming therefore only
    needs the step counter, the parameters and the optimiser moments.
    """

    def __init__(
        self,
        model: DocGraphModel,
        grouped: list[list[Example]],
        config: TrainConfig,
        step: int = 0,
    ):
        if not grouped or not any(grouped):
            raise ValueError("empty corpus")
        self.model = model
        self.grouped = grouped
        self.config = config
        self.step = step
        if config.stage == 2:
            model.freeze(Stage.STAGE1)
        else:
            model.unfreeze()
        self.params = [p for p in model.parameters() if p.requires_grad]
        self.optim = Adam(self.params, config.beta1, config.beta2, config.eps)
        self.optim.t = step

    def _epoch_batches(self, epoch: int) -> list[list[Example]]:
        order = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.grouped))
        flat = [e for k in order for e in self.grouped[k]]
        return token_batches(flat, self.config.max_tokens)

    def batches(self, start: int):
        """Yield ``(step, batch)`` from global step ``start`` onwards."""
        step, epoch = 0, 0
        while True:
            for b in self._epoch_batches(epoch):
                if step >= start:
                    yield step, b
                step += 1
            epoch += 1

    def loss(self, examples: Sequence[Example], training: bool, rng=None):
        cfg = self.model.config
        batch = collate(examples, cfg.context_scope, cfg.use_src_graph, cfg.use_tgt_graph)
        logp = self.model(batch, training=training, rng=rng)
        return sequence_loss(logp, batch.tgt_out, batch.tgt_mask, self.config.label_smoothing)

    def run(self, until: int | None = None, log: TrainLog | None = None) -> list[float]:
        until = self.config.max_steps if until is None else until
        losses = []
        if self.step >= until:
            return losses
        for step, examples in self.batches(self.step):
            rng = np.random.default_rng([self.config.seed, step, 1])
            ad.zero_grad(self.params)
            loss = self.loss(examples, training=True, rng=rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at step {step}")
            ad.backward(loss)
            lr = inverse_sqrt_lr(step + 1, self.config.learning_rate, self.config.warmup_steps)
            self.optim.step(lr)
            self.step = step + 1
            losses.append(value)
            if log is not None:
                log.add(self.step, value, lr)
            if self.step >= until:
                break
        return losses

    def checkpoint(self, bpe_src=None, bpe_tgt=None, extra: dict | None = None) -> Checkpoint:
        """Snapshot to 32-bit precision.

        The live state is rounded to the stored precision as well, so that a
        run resumed from this checkpoint and the run that keeps going in
        memory follow the same trajectory.
        """
        for p in self.model.parameters():
            _snap32(p.data)
        for store in (self.optim.m, self.optim.v):
            for a in store.values():
                _snap32(a)
        optim = {}
        for p in self.params:
            optim[f"m.{p.name}"] = self.optim.m[p.name].astype(np.float32)
            optim[f"v.{p.name}"] = self.optim.v[p.name].astype(np.float32)
        meta = {"seed": self.model.seed, "step": self.step, "train": self.config.to_dict()}
        meta.update(extra or {})
        params = {p.name: p.data.astype(np.float32) for p in self.model.parameters()}
        return Checkpoint(self.model.config, self.config.stage, params, optim, meta, bpe_src, bpe_tgt)

    @classmethod
    def resume(cls, ckpt: Checkpoint, grouped, config: TrainConfig | None = None) -> "Trainer":
        config = config or TrainConfig.from_dict(ckpt.meta["train"])
        trainer = cls(ckpt.build_model(), grouped, config, step=ckpt.step)
        for p in trainer.params:
            for store, key in ((trainer.optim.m, "m."), (trainer.optim.v, "v.")):
                saved = ckpt.optimizer.get(key + p.name)
                if saved is not None:
                    store[p.name][...] = saved
        return trainer


def sentence_config(config: ModelConfig) -> ModelConfig:
    return replace(config, use_src_graph=False, use_tgt_graph=False)


def train_stage1(
    docs: Sequence[ParallelDocument],
    model_config: ModelConfig,
    config: TrainConfig,
    bpe_src: BpeModel | None = None,
    bpe_tgt: BpeModel | None = None,
    log: TrainLog | None = None,
) -> Checkpoint:
    """Train the context-agnostic model on all sentence pairs."""
    if not docs:
        raise ValueError("empty corpus")
    if config.stage != 1:
        config = replace(config, stage=1)
    model = DocGraphModel(sentence_config(model_config), seed=config.seed, document_level=False)
    trainer = Trainer(model, sentence_examples(docs), config)
    trainer.run(log=log)
    return trainer.checkpoint(bpe_src, bpe_tgt)


# ---------------------------------------------------------------------------
# pseudo targets and stage 2


@dataclass
class PseudoTarget:
    doc: AnnotatedDocument
    graph: DocumentGraph
    contexts: list[GraphContext]


def pseudo_target(
    doc_id: str,
    words: Sequence[Sequence[str]],
    bpe: BpeModel,
    radius: int = 2,
    annotated: AnnotatedDocument | None = None,
) -> PseudoTarget:
    """Target document and graph built from (pseudo) translations."""
    relations = TARGET_RELATIONS
    tdoc = target_document(doc_id, words, bpe)
    if annotated is not None:
        if [[t.surface for t in s] for s in annotated.sentences] != [list(s) for s in words]:
            raise ValueError(f"{doc_id}: target annotations do not match the pseudo translation")
        tdoc = replace(annotated, subword_map=tdoc.subword_map)
        relations = ALL_RELATIONS
    graph = target_graph(tdoc, relations)
    return PseudoTarget(tdoc, graph, document_contexts(tdoc, graph, radius))


def generate_pseudo_targets(
    ckpt: Checkpoint,
    src_docs: Sequence[AnnotatedDocument],
    beam: int = 4,
    alpha: float = 0.6,
    annotations: Sequence[AnnotatedDocument] | None = None,
) -> list[PseudoTarget]:
    """Translate each sentence with the sentence-level model and build target graphs."""
    if ckpt.bpe_tgt is None:
        raise ValueError("checkpoint carries no target BPE model")
    model = ckpt.build_model()
    model = model.with_config(use_src_graph=False, use_tgt_graph=False)
    out = []
    for k, doc in enumerate(src_docs):
        words = [
            ckpt.bpe_tgt.decode(beam_search(model, sentence_ids(doc, m), beam=beam, alpha=alpha))
            for m in range(len(doc.sentences))
        ]
        ann = annotations[k] if annotations is not None else None
        out.append(pseudo_target(doc.doc_id, words, ckpt.bpe_tgt, ckpt.config.radius, ann))
    return out


DOCUMENT_DEFAULTS = {"use_src_graph": True, "use_tgt_graph": True}


def stage2_model(ckpt: Checkpoint, **overrides) -> DocGraphModel:
    """Document-level model whose Stage1 parameters come from ``ckpt``."""
    if ckpt.stage != 1:
        raise ValueError(f"expected a stage-1 checkpoint, got stage {ckpt.stage}")
    cfg = replace(ckpt.config, **_coerce(ModelConfig, {**DOCUMENT_DEFAULTS, **overrides}))
    model = DocGraphModel(cfg, seed=ckpt.seed, document_level=True)
    model.load_state_dict({k: v.astype(np.float64) for k, v in ckpt.params.items()}, strict=False)
    missing = {p.name for p in model.stage_parameters(Stage.STAGE1)} - set(ckpt.params)
    if missing:
        raise KeyError(f"stage-1 checkpoint lacks {sorted(missing)[:3]}")
    return model


def stage2_examples(
    docs: Sequence[ParallelDocument],
    cfg: ModelConfig,
    src_graphs: Sequence[DocumentGraph] | None,
    pseudo: Sequence[PseudoTarget] | None,
) -> list[list[Example]]:
    if cfg.use_src_graph and (src_graphs is None or len(src_graphs) != len(docs)):
        raise ValueError("stage 2 needs one source graph per document")
    if cfg.use_tgt_graph and (pseudo is None or len(pseudo) != len(docs)):
        raise ValueError("stage 2 needs one pseudo-target graph per document")
    src_ctx = None
    if cfg.use_src_graph:
        src_ctx = [document_contexts(d.src, g, cfg.radius) for d, g in zip(docs, src_graphs)]
    tgt_ctx = [p.contexts for p in pseudo] if cfg.use_tgt_graph else None
    return attach_contexts(sentence_examples(docs), src_ctx, tgt_ctx)


def train_stage2(
    stage1: Checkpoint,
    docs: Sequence[ParallelDocument],
    src_graphs: Sequence[DocumentGraph] | None,
    pseudo: Sequence[PseudoTarget] | None,
    config: TrainConfig,
    log: TrainLog | None = None,
    **overrides,
) -> Checkpoint:
    """Train only the document-level parameters; Stage1 tensors stay fixed.

    ``config`` is used as given; derive it with :meth:`TrainConfig.for_stage2`
    to get the reduced learning rate and batch.
    """
    if not docs:
        raise ValueError("empty corpus")
    model = stage2_model(stage1, **overrides)
    grouped = stage2_examples(docs, model.config, src_graphs, pseudo)
    trainer = Trainer(model, grouped, replace(config, stage=2))
    trainer.run(log=log)
    return trainer.checkpoint(stage1.bpe_src, stage1.bpe_tgt)


def source_graphs(docs: Sequence[ParallelDocument], relations=ALL_RELATIONS) -> list[DocumentGraph]:
    return [build_document_graph(d.src, relations) for d in docs]
