"""Synthetic parallel documents for desk-scale experiments.

``disambiguation_corpus`` hides the sense of an ambiguous source word in an
earlier occurrence two to four sentences back; the later occurrence carries
no sense marking of its own, so only document context can resolve its
translation.  In the ``lemma`` style the earlier occurrence is a
sense-marked inflection sharing the bare word's lemma (one lexical hop); in
the ``cue`` style it is the bare word preceded by a sense cue (a lexical hop
plus an adjacency hop).  ``long_range_corpus`` repeats a word every few
sentences so that lexical chains span large text distances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tokenize import BpeModel, learn_bpe, make_document
from .training import ParallelDocument

FILLERS = 16
AMBIGUOUS = 4
CUES_PER_SENSE = 2


def filler(i: int) -> tuple[str, str]:
    return f"w{i}", f"v{i}"


def ambiguous(i: int) -> str:
    return f"amb{i}"


def sense_word(i: int, sense: int) -> str:
    return f"amb{i}{'pq'[sense]}"


def cue(sense: int, j: int) -> tuple[str, str]:
    return f"cue{'pq'[sense]}{j}", f"kue{'pq'[sense]}{j}"


def inflected(i: int, sense: int) -> str:
    return f"amb{i}{('ka', 'ku')[sense]}"


@dataclass
class Probe:
    """A cue-less ambiguous occurrence whose translation is checked."""

    doc_index: int
    sentence_index: int
    target_position: int  # word index in the target sentence
    correct: str
    wrong: str


@dataclass
class SyntheticCorpus:
    src: list[list[list[str]]]
    tgt: list[list[list[str]]]
    probes: list[Probe]
    src_lemmas: list[list[list[str]]] | None = None


def _filler_sentence(rng, length) -> tuple[list[str], list[str]]:
    ids = rng.integers(0, FILLERS, size=length)
    return [filler(i)[0] for i in ids], [filler(i)[1] for i in ids]


def disambiguation_corpus(
    n_docs: int,
    seed: int,
    sentences: int = 6,
    min_len: int = 3,
    max_len: int = 5,
    gaps: Sequence[int] = (2, 3, 4),
    style: str = "lemma",
) -> SyntheticCorpus:
    """Documents with one ambiguous word whose sense is fixed earlier.

    The first occurrence is sense-marked (see the module docstring); the
    second, ``gap`` sentences later, is the bare word.  Both translate to the
    sense-specific target word.  No other sentence mentions the word.
    """
    if style not in ("lemma", "cue"):
        raise ValueError(f"unknown style {style!r}")
    rng = np.random.default_rng(seed)
    src_docs, tgt_docs, probes, lemma_docs = [], [], [], []
    for k in range(n_docs):
        word = int(rng.integers(AMBIGUOUS))
        sense = int(rng.integers(2))
        gap = int(rng.choice([g for g in gaps if g < sentences]))
        first = int(rng.integers(0, sentences - gap))
        second = first + gap
        src_doc, tgt_doc = [], []
        for m in range(sentences):
            s, t = _filler_sentence(rng, int(rng.integers(min_len, max_len + 1)))
            if m == first and style == "cue":
                pos = int(rng.integers(0, len(s) + 1))
                c = cue(sense, int(rng.integers(CUES_PER_SENSE)))
                s[pos:pos] = [c[0], ambiguous(word)]
                t[pos:pos] = [c[1], sense_word(word, sense)]
            elif m == first:
                pos = int(rng.integers(0, len(s) + 1))
                s.insert(pos, inflected(word, sense))
                t.insert(pos, sense_word(word, sense))
            elif m == second:
                pos = int(rng.integers(0, len(s) + 1))
                s.insert(pos, ambiguous(word))
                t.insert(pos, sense_word(word, sense))
                probes.append(Probe(k, m, pos, sense_word(word, sense), sense_word(word, 1 - sense)))
            src_doc.append(s)
            tgt_doc.append(t)
        src_docs.append(src_doc)
        tgt_docs.append(tgt_doc)
        lemma_docs.append([[lemma_of(w) for w in s] for s in src_doc])
    return SyntheticCorpus(src_docs, tgt_docs, probes, lemma_docs)


def lemma_of(word: str) -> str:
    """Sense-marked inflections share the lemma of the bare ambiguous word."""
    if word.startswith("amb") and word.endswith(("ka", "ku")):
        return word[:-2]
    return word


def long_range_corpus(
    n_docs: int,
    seed: int,
    sentences: int = 30,
    sentence_len: int = 6,
    period: Sequence[int] = (1, 2, 4, 8),
    vocab: int = 4000,
) -> list[list[list[str]]]:
    """Monolingual documents with a marker word repeated every ``k`` sentences.

    Background words come from a large vocabulary so that accidental
    repeats are rare; each document picks one period ``k``.
    """
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        k = int(period[d % len(period)])
        doc = []
        for m in range(sentences):
            words = [f"x{int(i)}" for i in rng.integers(0, vocab, size=sentence_len)]
            if m % k == 0:
                words[int(rng.integers(sentence_len))] = "marker"
            doc.append(words)
        docs.append(doc)
    return docs


def vocabulary_bpe(sentences: Sequence[Sequence[str]], extra_merges: int = 200) -> BpeModel:
    """BPE with enough merges that every repeated corpus word becomes one symbol.

    Merging stops at pair frequency 1, so a word seen once may stay split.
    """
    words = {w for s in sentences for w in s}
    budget = sum(len(w) for w in words) + extra_merges
    return learn_bpe(sentences, budget)


def parallel_documents(
    corpus: SyntheticCorpus,
    bpe_src: BpeModel,
    bpe_tgt: BpeModel,
    prefix: str = "doc",
) -> list[ParallelDocument]:
    return [
        ParallelDocument(
            make_document(
                f"{prefix}{k}", s, bpe_src,
                lemmas=corpus.src_lemmas[k] if corpus.src_lemmas is not None else None,
            ),
            make_document(f"{prefix}{k}", t, bpe_tgt),
        )
        for k, (s, t) in enumerate(zip(corpus.src, corpus.tgt))
    ]


def all_sentences(docs: Sequence[Sequence[Sequence[str]]]) -> list[list[str]]:
    return [list(s) for d in docs for s in d]
