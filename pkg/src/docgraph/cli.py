"""Command-line entry point: ``docgraph <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgfile
from .ablation import AblationGrid, rows_csv, run_ablation
from .bleu import BleuMode, bleu
from .decode import TargetMode, translate_document
from .model import ModelConfig, _coerce
from .graph import DocumentGraph, build_document_graph, document_record, dumps_records, graph_stats, growth_ratio, stats_csv, to_dot
from .synthetic import all_sentences, disambiguation_corpus, parallel_documents, vocabulary_bpe
from .tokenize import UNK, load_documents, learn_bpe, make_document, read_corpus
from .training import (
    Checkpoint,
    ParallelDocument,
    TrainConfig,
    TrainLog,
    generate_pseudo_targets,
    source_graphs,
    train_stage1,
    train_stage2,
)

DEFAULT_MERGES = 8000


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    return open(path, "w", encoding="utf-8")


def _write(path, text: str) -> None:
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()


# ---------------------------------------------------------------------------
# commands


def cmd_build_graph(args) -> None:
    docs = load_documents(args.corpus, args.conllu, args.coref, None)
    graphs = [build_document_graph(d) for d in docs]
    if args.format == "dot":
        text = "".join(to_dot(g, d) for g, d in zip(graphs, docs))
    else:
        text = dumps_records([document_record(g, d) for g, d in zip(graphs, docs)])
    _write(args.out, text)


def _data_files(data: Path, split: str = "train") -> dict:
    files = {
        "src": data / f"{split}.src",
        "tgt": data / f"{split}.tgt",
        "src_conllu": data / f"{split}.src.conllu",
        "src_coref": data / f"{split}.src.coref.jsonl",
    }
    for key in ("src", "tgt"):
        if not files[key].exists():
            raise FileNotFoundError(f"missing {files[key]}")
    return files


def _parallel(files, bpe_src, bpe_tgt) -> list[ParallelDocument]:
    src = load_documents(files["src"], files["src_conllu"], files["src_coref"], bpe_src)
    tgt = load_documents(files["tgt"], None, None, bpe_tgt)
    if len(src) != len(tgt):
        raise ValueError(f"{len(src)} source documents but {len(tgt)} target documents")
    return [ParallelDocument(s, t) for s, t in zip(src, tgt)]


RUN_KEYS = {"bpe_merges", "stage2_learning_rate", "stage2_max_tokens", "stage2_steps"}


def cmd_train(args) -> None:
    kv = cfgfile.read_kv(args.config) if args.config else {}
    model_kv, train_kv, run_kv = cfgfile.split(kv, RUN_KEYS)
    files = _data_files(Path(args.data))
    log_fh = _open_out(args.log) if args.log else None
    log = TrainLog(log_fh)
    try:
        if args.stage == 1:
            merges = int(run_kv.get("bpe_merges", DEFAULT_MERGES))
            bpe_src = learn_bpe(all_sentences(read_corpus(files["src"])), merges)
            bpe_tgt = learn_bpe(all_sentences(read_corpus(files["tgt"])), merges)
            docs = _parallel(files, bpe_src, bpe_tgt)
            mcfg = cfgfile.model_config(model_kv, len(bpe_src), len(bpe_tgt))
            tcfg = cfgfile.train_config(train_kv, stage=1)
            ckpt = train_stage1(docs, mcfg, tcfg, bpe_src, bpe_tgt, log)
        else:
            if not args.init:
                raise ValueError("stage 2 needs --init with a stage-1 checkpoint")
            stage1 = Checkpoint.load(args.init)
            docs = _parallel(files, stage1.bpe_src, stage1.bpe_tgt)
            tcfg = cfgfile.train_config(train_kv).for_stage2(
                learning_rate=_opt_float(run_kv.get("stage2_learning_rate")),
                max_tokens=_opt_int(run_kv.get("stage2_max_tokens")),
            )
            if "stage2_steps" in run_kv:
                tcfg = replace(tcfg, max_steps=int(run_kv["stage2_steps"]))
            overrides = {k: v for k, v in model_kv.items() if k not in ("src_vocab", "tgt_vocab")}
            pseudo = generate_pseudo_targets(stage1, [d.src for d in docs], beam=args.beam)
            ckpt = train_stage2(
                stage1, docs, source_graphs(docs), pseudo, tcfg, log, **_coerce(ModelConfig, overrides)
            )
    finally:
        if log_fh is not None and log_fh is not sys.stdout:
            log_fh.close()
    ckpt.save(args.out)
    print(f"saved stage-{ckpt.stage} checkpoint to {args.out} after {ckpt.step} steps", file=sys.stderr)


def _opt_float(v):
    return None if v is None else float(v)


def _opt_int(v):
    return None if v is None else int(v)


def cmd_translate(args) -> None:
    ckpt = Checkpoint.load(args.ckpt)
    docs = load_documents(args.input, args.conllu, args.coref, ckpt.bpe_src)
    model = ckpt.build_model()
    mode = TargetMode(args.mode)
    pseudo = None
    if ckpt.stage == 2 and model.config.use_tgt_graph and mode is TargetMode.TGT:
        pseudo = generate_pseudo_targets(ckpt, docs, beam=args.beam, alpha=args.alpha)
    if ckpt.stage == 1:
        mode = TargetMode.NO_TGT
    out_docs = []
    for k, d in enumerate(docs):
        tr = translate_document(
            model, d, mode, ckpt.bpe_tgt,
            tgt_contexts=pseudo[k].contexts if pseudo is not None else None,
            beam=args.beam, alpha=args.alpha,
        )
        out_docs.append("\n".join(" ".join(w) if w else UNK for w in tr.words))
    _write(args.out, "\n\n".join(out_docs) + "\n")


def cmd_evaluate(args) -> None:
    hyp, ref = read_corpus(args.hyp), read_corpus(args.ref)
    mode = BleuMode.SENTENCE if args.mode == "sentence" else BleuMode.DOCUMENT
    if mode is BleuMode.SENTENCE:
        report = bleu(all_sentences(hyp), all_sentences(ref), mode, smooth=args.smooth)
    else:
        report = bleu(hyp, ref, mode, smooth=args.smooth)
    print(report)


def cmd_stats(args) -> None:
    graphs, docs = [], []
    with open(args.graphs, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(make_document(rec.get("doc_id", f"doc{lineno}"), rec["sentences"]))
                graphs.append(DocumentGraph.from_json(rec))
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"{args.graphs}:{lineno}: bad graph record ({e})") from None
    rows = graph_stats(graphs, docs, args.bucket_width, args.radius)
    _write(args.out, stats_csv(rows))
    if len(rows) >= 2:
        print(f"growth ratio (graph size / text distance): {growth_ratio(rows):.4f}", file=sys.stderr)


GRID_KEYS = {
    "relations", "architectures", "sides", "train_docs", "test_docs", "stage1_steps",
    "stage2_steps", "beam", "alpha", "corpus_seed",
}


def cmd_ablate(args) -> None:
    kv = cfgfile.read_kv(args.grid)
    model_kv, train_kv, grid_kv = cfgfile.split(kv, GRID_KEYS)
    grid = AblationGrid.from_strings(
        grid_kv.get("relations", "all"),
        grid_kv.get("architectures", "serial,parallel,hybrid"),
        grid_kv.get("sides", "src,src+tgt,src+tgt-prev"),
    )
    seed = int(grid_kv.get("corpus_seed", 0))
    train = disambiguation_corpus(int(grid_kv.get("train_docs", 100)), seed=1000 + seed)
    test = disambiguation_corpus(int(grid_kv.get("test_docs", 20)), seed=2000 + seed)
    bpe_src = vocabulary_bpe(all_sentences(train.src + test.src))
    bpe_tgt = vocabulary_bpe(all_sentences(train.tgt + test.tgt))
    docs = parallel_documents(train, bpe_src, bpe_tgt, "train")
    held = parallel_documents(test, bpe_src, bpe_tgt, "test")
    tcfg = cfgfile.train_config(train_kv, stage=1, max_steps=int(grid_kv.get("stage1_steps", 300)))
    if args.ckpt:
        stage1 = Checkpoint.load(args.ckpt)
        if len(stage1.bpe_src) != len(bpe_src) or len(stage1.bpe_tgt) != len(bpe_tgt):
            raise ValueError("stage-1 checkpoint vocabulary does not match the ablation corpus")
    else:
        mcfg = cfgfile.model_config(model_kv, len(bpe_src), len(bpe_tgt))
        stage1 = train_stage1(docs, mcfg, tcfg, bpe_src, bpe_tgt)
    beam = int(grid_kv.get("beam", 4))
    alpha = float(grid_kv.get("alpha", 0.6))
    s2 = replace(tcfg.for_stage2(), max_steps=int(grid_kv.get("stage2_steps", 100)))
    pseudo_train = generate_pseudo_targets(stage1, [d.src for d in docs], beam=beam, alpha=alpha)
    pseudo_held = generate_pseudo_targets(stage1, [d.src for d in held], beam=beam, alpha=alpha)
    progress = lambda r: print(f"{r.relations} {r.architecture} {r.sides}: loss {r.final_loss:.3f}", file=sys.stderr)  # noqa: E731
    rows = run_ablation(grid, stage1, docs, held, pseudo_train, pseudo_held, s2, test.probes,
                        beam, alpha, progress)
    _write(args.out, rows_csv(rows))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="docgraph", description="Graph-augmented document translation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("build-graph", help="build document graphs from an annotated corpus")
    g.add_argument("--corpus", required=True)
    g.add_argument("--conllu")
    g.add_argument("--coref")
    g.add_argument("--out", default="-")
    g.add_argument("--format", choices=["json", "dot"], default="json")
    g.set_defaults(func=cmd_build_graph)

    t = sub.add_parser("train", help="run stage 1 or stage 2 training")
    t.add_argument("--stage", type=int, choices=[1, 2], required=True)
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="directory with train.src / train.tgt")
    t.add_argument("--out", required=True)
    t.add_argument("--init", help="stage-1 checkpoint (stage 2 only)")
    t.add_argument("--log", help="CSV training log path, '-' for stdout")
    t.add_argument("--beam", type=int, default=4, help="beam for pseudo-target generation")
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="translate a corpus document by document")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--input", required=True)
    tr.add_argument("--conllu")
    tr.add_argument("--coref")
    tr.add_argument("--mode", choices=[m.value for m in TargetMode], default="tgt")
    tr.add_argument("--beam", type=int, default=4)
    tr.add_argument("--alpha", type=float, default=0.6)
    tr.add_argument("--out", default="-")
    tr.set_defaults(func=cmd_translate)

    e = sub.add_parser("evaluate", help="corpus BLEU")
    e.add_argument("--hyp", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--mode", choices=["sentence", "document"], default="sentence")
    e.add_argument("--smooth", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stats", help="graph size against text distance (CSV)")
    s.add_argument("--graphs", required=True, help="JSON lines written by build-graph")
    s.add_argument("--bucket-width", type=int, default=10)
    s.add_argument("--radius", type=int, default=2)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_stats)

    a = sub.add_parser("ablate", help="relation / architecture / graph-side grid")
    a.add_argument("--grid", required=True)
    a.add_argument("--ckpt", help="reuse a stage-1 checkpoint trained on the same corpus")
    a.add_argument("--out", default="-")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError, KeyError) as e:
        msg = str(e).strip().splitlines()[0] if str(e).strip() else type(e).__name__
        print(f"docgraph {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
