"""Corpus-level 4-gram BLEU."""

from __future__ import annotations

import collections
import enum
import math
from dataclasses import dataclass
from typing import Sequence

MAX_ORDER = 4


class BleuMode(enum.Enum):
    SENTENCE = "sentence"
    DOCUMENT = "document"  # each document scored as one long sentence


@dataclass(frozen=True)
class BleuReport:
    score: float  # 0..100
    precisions: tuple[float, ...]  # n = 1..4, as fractions
    brevity_penalty: float
    mode: BleuMode
    hyp_length: int
    ref_length: int
    matches: tuple[int, ...] = ()
    totals: tuple[int, ...] = ()

    def __str__(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.score:.2f} {ps} (BP={self.brevity_penalty:.3f} "
            f"hyp_len={self.hyp_length} ref_len={self.ref_length} mode={self.mode.value})"
        )


def ngrams(tokens: Sequence[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _segments(items, mode: BleuMode) -> list[list[str]]:
    """Flatten to one token list per scored segment."""
    if mode is BleuMode.SENTENCE:
        return [list(s) for s in items]
    return [[w for sent in doc for w in sent] for doc in items]


def bleu(
    hypotheses: Sequence,
    references: Sequence,
    mode: BleuMode | str = BleuMode.SENTENCE,
    smooth: bool = False,
) -> BleuReport:
    """Corpus BLEU with clipped n-gram counts and a single reference.

    In sentence mode both arguments are lists of token lists; in document mode
    they are lists of documents, each a list of token lists, and every
    document is concatenated before counting.  ``smooth`` adds one to the
    numerator and denominator of orders >= 2 (off by default).
    """
    mode = BleuMode(mode)
    if len(hypotheses) != len(references):
        unit = "sentences" if mode is BleuMode.SENTENCE else "documents"
        raise ValueError(f"{len(hypotheses)} hypothesis {unit} but {len(references)} reference {unit}")
    if mode is BleuMode.DOCUMENT:
        for i, (h, r) in enumerate(zip(hypotheses, references)):
            if len(h) != len(r):
                raise ValueError(f"document {i}: {len(h)} hypothesis vs {len(r)} reference sentences")
    hyps, refs = _segments(hypotheses, mode), _segments(references, mode)
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c = r = 0
    for h, ref in zip(hyps, refs):
        c += len(h)
        r += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = ngrams(h, n), ngrams(ref, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    precisions = []
    for n in range(MAX_ORDER):
        num, den = matches[n], totals[n]
        if smooth and n > 0:
            num, den = num + 1, den + 1
        precisions.append(num / den if den > 0 else 0.0)
    bp = 1.0 if c >= r else (math.exp(1.0 - r / c) if c > 0 else 0.0)
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(score, tuple(precisions), bp, mode, c, r, tuple(matches), tuple(totals))
