"""Transformer translation model with gated graph cross-attention.

The encoder integrates the source graph after self-attention; the decoder
integrates the target graph next to self-attention and the source graph next
to source cross-attention.  Graph-side sublayers replace their residual with
a sigmoid gate.  Disabling both graphs leaves a plain post-norm transformer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Stage, Tensor
from .data import Batch, ContextScope, GraphBatch
from .graph_encoder import Aggregation, GraphEncoder, GraphEncoderConfig, embed_nodes
from .tokenize import PAD_ID

NEG_INF = -1e9


class Architecture(enum.Enum):
    SERIAL = "serial"
    PARALLEL = "parallel"
    HYBRID = "hybrid"

    @property
    def encoder_parallel(self) -> bool:
        return self is Architecture.PARALLEL

    @property
    def decoder_parallel(self) -> bool:
        return self is not Architecture.SERIAL


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    layers: int = 2
    heads: int = 4
    hidden: int = 64
    ffn: int = 256
    dropout: float = 0.2
    architecture: Architecture = Architecture.HYBRID
    use_src_graph: bool = True
    use_tgt_graph: bool = True
    context_scope: ContextScope = ContextScope.CURRENT
    graph_layers: int = 2
    graph_aggregation: Aggregation = Aggregation.TYPE_ATTENTION
    graph_dropout: float = 0.2
    radius: int = 2
    tied_softmax: bool = False
    max_len: int = 256

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")

    @property
    def graph_encoder(self) -> GraphEncoderConfig:
        return GraphEncoderConfig(
            self.hidden, self.graph_layers, self.graph_aggregation, self.graph_dropout
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, enum.Enum):
                d[k] = v.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**_coerce(cls, d))


_ENUMS = {
    "architecture": Architecture,
    "context_scope": ContextScope,
    "graph_aggregation": Aggregation,
}


def _coerce(cls, d: dict) -> dict:
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for k, v in d.items():
        if k not in types:
            raise KeyError(f"unknown {cls.__name__} key {k!r}")
        if k in _ENUMS:
            v = _ENUMS[k](v.lower() if isinstance(v, str) else v.value)
        elif types[k] in ("bool", bool):
            v = v if isinstance(v, bool) else _parse_bool(k, v)
        elif types[k] in ("int", int):
            v = int(v)
        elif types[k] in ("float", float):
            v = float(v)
        out[k] = v
    return out


def _parse_bool(key, value) -> bool:
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {value!r}")


# ---------------------------------------------------------------------------
# building blocks


def _xavier(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class Linear:
    def __init__(self, name, d_in, d_out, rng, stage=Stage.STAGE1, bias=True):
        self.weight = Parameter(f"{name}.weight", _xavier(rng, d_in, d_out), stage)
        self.bias = Parameter(f"{name}.bias", np.zeros(d_out), stage) if bias else None

    def __call__(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class LayerNorm:
    def __init__(self, name, d, stage=Stage.STAGE1):
        self.gain = Parameter(f"{name}.gain", np.ones(d), stage)
        self.bias = Parameter(f"{name}.bias", np.zeros(d), stage)

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return [self.gain, self.bias]


class FeedForward:
    def __init__(self, name, d, inner, rng, stage=Stage.STAGE1):
        self.inner = Linear(f"{name}.inner", d, inner, rng, stage)
        self.outer = Linear(f"{name}.outer", inner, d, rng, stage)

    def __call__(self, x):
        return self.outer(ad.relu(self.inner(x)))

    def parameters(self):
        return self.inner.parameters() + self.outer.parameters()


class MultiHeadAttention:
    """Scaled dot-product attention over ``heads`` subspaces.

    ``mask`` is a boolean array broadcastable to ``[B, Tq, Tk]``; masked keys
    get exactly zero weight, and a query with no admissible key returns the
    output bias.
    """

    def __init__(self, name, d, heads, rng, stage=Stage.STAGE1):
        self.heads = heads
        self.q = Linear(f"{name}.q", d, d, rng, stage)
        self.k = Linear(f"{name}.k", d, d, rng, stage)
        self.v = Linear(f"{name}.v", d, d, rng, stage)
        self.o = Linear(f"{name}.o", d, d, rng, stage)

    def parameters(self):
        return self.q.parameters() + self.k.parameters() + self.v.parameters() + self.o.parameters()

    def _split(self, x):
        b, t, d = x.shape
        return ad.transpose(ad.reshape(x, (b, t, self.heads, d // self.heads)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return multi_head_attention(self, query, memory, mask)


def multi_head_attention(att: MultiHeadAttention, query, memory, mask=None) -> Tensor:
    query, memory = ad.as_tensor(query), ad.as_tensor(memory)
    if query.ndim != 3 or memory.ndim != 3 or query.shape[-1] != memory.shape[-1]:
        raise ad.ShapeError(f"attention: query {query.shape} vs memory {memory.shape}")
    b, tq, d = query.shape
    q, k, v = att._split(att.q(query)), att._split(att.k(memory)), att._split(att.v(memory))
    scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d // att.heads))
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), (b, tq, memory.shape[1]))[:, None]
        scores = scores + np.where(mask, 0.0, NEG_INF)
        weights = ad.softmax(scores, axis=-1) * mask
    else:
        weights = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(weights @ v, (0, 2, 1, 3)), (b, tq, d))
    return att.o(ctx)


class Gate:
    """``lam * H_a + (1 - lam) * H_c`` with ``lam = sigmoid(H_a W_a + H_c W_c)``."""

    def __init__(self, name, d, rng, stage=Stage.STAGE2):
        self.w_a = Parameter(f"{name}.W_a", _xavier(rng, d, d), stage)
        self.w_c = Parameter(f"{name}.W_c", _xavier(rng, d, d), stage)

    def parameters(self):
        return [self.w_a, self.w_c]

    def __call__(self, h_a, h_c):
        return gate(h_a, h_c, self.w_a, self.w_c)


def gate(h_a, h_c, w_a, w_c) -> Tensor:
    h_a, h_c = ad.as_tensor(h_a), ad.as_tensor(h_c)
    if h_a.shape != h_c.shape:
        raise ad.ShapeError(f"gate: H_a {h_a.shape} vs H_c {h_c.shape}")
    lam = ad.sigmoid(h_a @ w_a + h_c @ w_c)
    return lam * h_a + (1.0 - lam) * h_c


@dataclass
class ContextBundle:
    """Encoded graphs for a batch, with per-example key masks."""

    src_graph_repr: Tensor | None = None
    src_mask: np.ndarray | None = None  # bool [B, L_s]
    src_has: np.ndarray | None = None  # bool [B]
    tgt_graph_repr: Tensor | None = None
    tgt_mask: np.ndarray | None = None
    tgt_has: np.ndarray | None = None


def _gated(gate_fn: Gate, h_a: Tensor, h_c: Tensor, has: np.ndarray) -> Tensor:
    mixed = gate_fn(h_a, h_c)
    if has.all():
        return mixed
    return ad.where(has[:, None, None], mixed, h_a)


# ---------------------------------------------------------------------------
# layers


class EncoderLayer:
    def __init__(self, name, cfg: ModelConfig, rng, doc_rng=None):
        d = cfg.hidden
        self.cfg = cfg
        self.self_att = MultiHeadAttention(f"{name}.self_att", d, cfg.heads, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", d)
        self.ffn = FeedForward(f"{name}.ffn", d, cfg.ffn, rng)
        self.norm2 = LayerNorm(f"{name}.norm2", d)
        self.graph_att = self.gate = None
        if doc_rng is not None:
            self.graph_att = MultiHeadAttention(f"{name}.graph_att", d, cfg.heads, doc_rng, Stage.STAGE2)
            self.gate = Gate(f"{name}.gate", d, doc_rng)

    def parameters(self):
        ps = self.self_att.parameters() + self.norm1.parameters()
        ps += self.ffn.parameters() + self.norm2.parameters()
        if self.graph_att is not None:
            ps += self.graph_att.parameters() + self.gate.parameters()
        return ps

    def __call__(self, h, src_mask, ctx: ContextBundle | None, use_graph, drop):
        h_a = self.norm1(h + drop(self.self_att(h, h, src_mask[:, None, :])))
        if use_graph:
            if ctx is None or ctx.src_graph_repr is None:
                raise ValueError("encoder layer needs a source graph context")
            query = h if self.cfg.architecture.encoder_parallel else h_a
            h_c = drop(self.graph_att(query, ctx.src_graph_repr, ctx.src_mask[:, None, :]))
            h_a = _gated(self.gate, h_a, h_c, ctx.src_has)
        return self.norm2(h_a + drop(self.ffn(h_a)))


class DecoderLayer:
    def __init__(self, name, cfg: ModelConfig, rng, doc_rng=None):
        d = cfg.hidden
        self.cfg = cfg
        self.self_att = MultiHeadAttention(f"{name}.self_att", d, cfg.heads, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", d)
        self.src_att = MultiHeadAttention(f"{name}.src_att", d, cfg.heads, rng)
        self.norm2 = LayerNorm(f"{name}.norm2", d)
        self.ffn = FeedForward(f"{name}.ffn", d, cfg.ffn, rng)
        self.norm3 = LayerNorm(f"{name}.norm3", d)
        self.graph_att = self.tgt_gate = self.src_gate = None
        if doc_rng is not None:
            # one graph cross-attention serves both the target and the source graph
            self.graph_att = MultiHeadAttention(f"{name}.graph_att", d, cfg.heads, doc_rng, Stage.STAGE2)
            self.tgt_gate = Gate(f"{name}.tgt_gate", d, doc_rng)
            self.src_gate = Gate(f"{name}.src_gate", d, doc_rng)

    def parameters(self):
        ps = self.self_att.parameters() + self.norm1.parameters()
        ps += self.src_att.parameters() + self.norm2.parameters()
        ps += self.ffn.parameters() + self.norm3.parameters()
        if self.graph_att is not None:
            ps += self.graph_att.parameters() + self.tgt_gate.parameters() + self.src_gate.parameters()
        return ps

    def __call__(self, y, memory, src_mask, self_mask, ctx, use_src, use_tgt, drop):
        parallel = self.cfg.architecture.decoder_parallel
        h_a = self.norm1(y + drop(self.self_att(y, y, self_mask)))
        if use_tgt:
            if ctx is None or ctx.tgt_graph_repr is None:
                raise ValueError("decoder layer needs a target graph context")
            query = y if parallel else h_a
            h_t = drop(self.graph_att(query, ctx.tgt_graph_repr, ctx.tgt_mask[:, None, :]))
            h_a = _gated(self.tgt_gate, h_a, h_t, ctx.tgt_has)
        h_c = self.norm2(h_a + drop(self.src_att(h_a, memory, src_mask[:, None, :])))
        if use_src:
            if ctx is None or ctx.src_graph_repr is None:
                raise ValueError("decoder layer needs a source graph context")
            query = h_a if parallel else h_c
            h_g = drop(self.graph_att(query, ctx.src_graph_repr, ctx.src_mask[:, None, :]))
            h_c = _gated(self.src_gate, h_c, h_g, ctx.src_has)
        return self.norm3(h_c + drop(self.ffn(h_c)))


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# ---------------------------------------------------------------------------
# model


class DocGraphModel:
    """All parameters of the document-level translator.

    The base transformer is initialised from one random stream and the
    document-level parts (graph encoders, graph attentions, gates) from an
    independent one, so a model built with ``document_level=False`` and the
    same seed has bit-identical base parameters.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, document_level: bool = True):
        self.config = config
        self.seed = seed
        self.document_level = document_level
        base_rng, doc_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        d = config.hidden
        scale = d ** -0.5
        self.src_embed = Parameter("src_embed", base_rng.normal(0.0, scale, (config.src_vocab, d)))
        self.tgt_embed = Parameter("tgt_embed", base_rng.normal(0.0, scale, (config.tgt_vocab, d)))
        self.encoder = [
            EncoderLayer(f"encoder.layer{i}", config, base_rng, doc_rng if document_level else None)
            for i in range(config.layers)
        ]
        self.decoder = [
            DecoderLayer(f"decoder.layer{i}", config, base_rng, doc_rng if document_level else None)
            for i in range(config.layers)
        ]
        self.out_proj = None
        if not config.tied_softmax:
            self.out_proj = Linear("out_proj", d, config.tgt_vocab, base_rng)
        self.out_bias = Parameter("out_bias", np.zeros(config.tgt_vocab)) if config.tied_softmax else None
        self.src_graph_encoder = self.tgt_graph_encoder = None
        if document_level:
            self.src_graph_encoder = GraphEncoder("graph_encoder.src", config.graph_encoder, doc_rng)
            self.tgt_graph_encoder = GraphEncoder("graph_encoder.tgt", config.graph_encoder, doc_rng)
        self.positions = sinusoidal_positions(config.max_len, d)
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise RuntimeError("duplicate parameter names")

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        ps = [self.src_embed, self.tgt_embed]
        for layer in self.encoder + self.decoder:
            ps += layer.parameters()
        if self.out_proj is not None:
            ps += self.out_proj.parameters()
        else:
            ps.append(self.out_bias)
        for enc in (self.src_graph_encoder, self.tgt_graph_encoder):
            if enc is not None:
                ps += enc.parameters()
        return ps

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def stage_parameters(self, stage: Stage) -> list[Parameter]:
        return [p for p in self.parameters() if p.stage is stage]

    def freeze(self, stage: Stage) -> None:
        for p in self.parameters():
            p.requires_grad = p.stage is not stage

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, value in state.items():
            if name not in params:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            p = params[name]
            if p.shape != tuple(value.shape):
                raise ad.ShapeError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data[...] = value

    def with_config(self, **changes) -> "DocGraphModel":
        """Same parameters (shared, not copied) under an edited configuration."""
        other = object.__new__(DocGraphModel)
        other.__dict__.update(self.__dict__)
        cfg = replace(self.config, **_coerce(ModelConfig, changes))
        other.config = cfg
        other.encoder = [_relayer(layer, cfg) for layer in self.encoder]
        other.decoder = [_relayer(layer, cfg) for layer in self.decoder]
        return other

    # -- forward -------------------------------------------------------------

    def _embed(self, table, ids):
        d = self.config.hidden
        x = ad.embedding(table, ids) * math.sqrt(d)
        return x + self.positions[: ids.shape[1]]

    def _encode_graph(self, encoder, table, gb: GraphBatch, training, rng):
        # nodes start from the same sqrt(d)-scaled subword embeddings the transformer reads
        h0 = embed_nodes(table, gb.sub_ids, gb.sub_weights) * math.sqrt(self.config.hidden)
        return encoder(h0, gb.prop, training, rng)

    def encode_context(self, batch: Batch, training=False, rng=None) -> ContextBundle:
        cfg = self.config
        ctx = ContextBundle()
        if cfg.use_src_graph:
            if batch.src_graph is None:
                raise ValueError("batch lacks source graphs but use_src_graph is set")
            gb = batch.src_graph
            ctx.src_graph_repr = self._encode_graph(self.src_graph_encoder, self.src_embed, gb, training, rng)
            ctx.src_mask, ctx.src_has = gb.scope, gb.has_nodes
        if cfg.use_tgt_graph:
            if batch.tgt_graph is None:
                raise ValueError("batch lacks target graphs but use_tgt_graph is set")
            gb = batch.tgt_graph
            ctx.tgt_graph_repr = self._encode_graph(self.tgt_graph_encoder, self.tgt_embed, gb, training, rng)
            ctx.tgt_mask, ctx.tgt_has = gb.scope, gb.has_nodes
        return ctx

    def _check_document_level(self):
        cfg = self.config
        if (cfg.use_src_graph or cfg.use_tgt_graph) and not self.document_level:
            raise ValueError("graph integration requested on a sentence-level model")

    def encode(self, src, src_mask, ctx, training=False, rng=None):
        drop = _dropper(self.config.dropout, training, rng)
        h = drop(self._embed(self.src_embed, src))
        for layer in self.encoder:
            h = layer(h, src_mask, ctx, self.config.use_src_graph, drop)
        return h

    def decode(self, tgt_in, memory, src_mask, ctx, training=False, rng=None):
        cfg = self.config
        drop = _dropper(cfg.dropout, training, rng)
        t = tgt_in.shape[1]
        causal = np.tril(np.ones((t, t), dtype=bool))[None]
        self_mask = causal & (tgt_in != PAD_ID)[:, None, :]
        y = drop(self._embed(self.tgt_embed, tgt_in))
        for layer in self.decoder:
            y = layer(y, memory, src_mask, self_mask, ctx, cfg.use_src_graph, cfg.use_tgt_graph, drop)
        if self.out_proj is not None:
            logits = self.out_proj(y)
        else:
            logits = y @ ad.transpose(self.tgt_embed) + self.out_bias
        return ad.log_softmax(logits, axis=-1)

    def forward(self, batch: Batch, training: bool = False, rng=None) -> Tensor:
        """Log-probabilities ``[B, T, V]`` of the next target token at every position."""
        self._check_document_level()
        ctx = self.encode_context(batch, training, rng)
        memory = self.encode(batch.src, batch.src_mask, ctx, training, rng)
        return self.decode(batch.tgt_in, memory, batch.src_mask, ctx, training, rng)

    __call__ = forward


def _relayer(layer, cfg):
    clone = object.__new__(type(layer))
    clone.__dict__.update(layer.__dict__)
    clone.cfg = cfg
    return clone


def _dropper(p, training, rng):
    if not training or p == 0.0:
        return lambda x: x
    return lambda x: ad.dropout(x, p, True, rng)


def sequence_loss(
    logprobs: Tensor, targets: np.ndarray, mask: np.ndarray, label_smoothing: float = 0.0
) -> Tensor:
    """Mean per-token cross-entropy against smoothed one-hot targets."""
    v = logprobs.shape[-1]
    floor = label_smoothing / v
    dist = np.full(logprobs.shape, floor)
    np.put_along_axis(dist, targets[..., None], 1.0 - label_smoothing + floor, axis=-1)
    dist *= mask[..., None]
    return -(logprobs * dist).sum() * (1.0 / max(1, int(mask.sum())))
