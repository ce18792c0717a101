"""Corpus ingestion, CoNLL-U / coreference annotations and byte-pair encoding."""

from __future__ import annotations

import collections
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

END_OF_WORD = "</w>"
PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    sentence_index: int
    word_index: int
    global_index: int


Mention = tuple  # (sentence_index, start, end), end inclusive


@dataclass
class AnnotatedDocument:
    doc_id: str
    sentences: list[list[Token]]
    dep_arcs: list[tuple[int, int]] = field(default_factory=list)
    coref_chains: list[list[Mention]] = field(default_factory=list)
    subword_map: list[list[int]] = field(default_factory=list)

    @property
    def tokens(self) -> list[Token]:
        return [t for sent in self.sentences for t in sent]

    def __len__(self) -> int:
        return sum(len(s) for s in self.sentences)

    def sentence_offsets(self) -> list[int]:
        """Global index of the first word of every sentence."""
        offsets, n = [], 0
        for sent in self.sentences:
            offsets.append(n)
            n += len(sent)
        return offsets

    def sentence_of(self) -> list[int]:
        return [t.sentence_index for t in self.tokens]

    def words(self, sentence_index: int) -> list[str]:
        return [t.surface for t in self.sentences[sentence_index]]


# ---------------------------------------------------------------------------
# byte-pair encoding


@dataclass
class BpeModel:
    """Learned merge table plus the subword vocabulary derived from it.

    Ids 0-3 are reserved for the special symbols; the initial character
    symbols follow in sorted order, then one id per merge in learning order.
    """

    merges: list[tuple[str, str]]
    symbols: list[str]
    end_of_word: str = END_OF_WORD

    def __post_init__(self):
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        vocab: dict[str, int] = {}
        for sym in list(SPECIALS) + sorted(self.symbols) + [a + b for a, b in self.merges]:
            vocab.setdefault(sym, len(vocab))
        self.vocab = vocab
        self.id_to_symbol = {i: s for s, i in vocab.items()}
        self._cache: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.vocab)

    def segment(self, word: str) -> list[str]:
        cached = self._cache.get(word)
        if cached is None:
            cached = self._cache[word] = _apply_merges(self.ranks, word, self.end_of_word)
        return list(cached)

    def encode_word(self, word: str) -> list[int]:
        return [self.vocab.get(s, UNK_ID) for s in self.segment(word)]

    def encode(self, words: Sequence[str]) -> list[int]:
        return [i for w in words for i in self.encode_word(w)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Rebuild words from subword ids, dropping specials."""
        words, current = [], ""
        for i in ids:
            sym = self.id_to_symbol.get(int(i), UNK)
            if sym in SPECIALS:
                continue
            if sym.endswith(self.end_of_word):
                words.append(current + sym[: -len(self.end_of_word)])
                current = ""
            else:
                current += sym
        if current:
            words.append(current)
        return words

    def to_dict(self) -> dict:
        return {"merges": [list(m) for m in self.merges], "symbols": list(self.symbols)}

    @classmethod
    def from_dict(cls, d: dict) -> "BpeModel":
        return cls([tuple(m) for m in d["merges"]], list(d["symbols"]))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("#symbols " + " ".join(sorted(self.symbols)) + "\n")
            for a, b in self.merges:
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "BpeModel":
        merges, symbols = [], None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#symbols"):
                    symbols = line.split()[1:]
                    continue
                if not line or line.startswith("#"):
                    continue
                a, b = line.split(" ")
                merges.append((a, b))
        if symbols is None:
            produced = {a + b for a, b in merges}
            symbols = sorted({s for pair in merges for s in pair} - produced)
        return cls(merges, symbols)


def _initial_symbols(word: str, eow: str = END_OF_WORD) -> list[str]:
    return list(word[:-1]) + [word[-1] + eow]


def _apply_merges(ranks: dict, word: str, eow: str) -> list[str]:
    symbols = _initial_symbols(word, eow)
    while len(symbols) > 1:
        best = min(
            (ranks.get(pair, len(ranks)), pair) for pair in zip(symbols, symbols[1:])
        )
        if best[0] == len(ranks):
            break
        a, b = best[1]
        merged, i = [], 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                merged.append(a + b)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


def count_pairs(words: dict[tuple[str, ...], int]) -> collections.Counter:
    counts: collections.Counter = collections.Counter()
    for symbols, freq in words.items():
        for pair in zip(symbols, symbols[1:]):
            counts[pair] += freq
    return counts


def learn_bpe(corpus: Sequence[Sequence[str]], num_merges: int) -> BpeModel:
    """Learn up to ``num_merges`` merges from tokenized sentences.

    Each step merges the most frequent adjacent pair (ties go to the
    lexicographically smallest pair).  Learning stops early once no pair
    occurs at least twice.
    """
    if num_merges < 1:
        raise ValueError(f"num_merges must be >= 1, got {num_merges}")
    freqs = collections.Counter(w for sent in corpus for w in sent if w)
    if not freqs:
        raise ValueError("empty corpus")
    words = {tuple(_initial_symbols(w)): n for w, n in freqs.items()}
    alphabet = sorted({s for symbols in words for s in symbols})
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        counts = count_pairs(words)
        if not counts:
            break
        top = max(counts.values())
        if top < 2:
            break
        pair = min(p for p, c in counts.items() if c == top)
        merges.append(pair)
        a, b = pair
        updated = {}
        for symbols, freq in words.items():
            if len(symbols) > 1:
                symbols = tuple(_merge_pair(symbols, a, b))
            updated[symbols] = updated.get(symbols, 0) + freq
        words = updated
    return BpeModel(merges, alphabet)


def _merge_pair(symbols: Sequence[str], a: str, b: str) -> list[str]:
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def apply_bpe(model: BpeModel, word: str) -> list[str]:
    if not word:
        raise ValueError("cannot segment an empty word")
    return model.segment(word)


# ---------------------------------------------------------------------------
# documents


def make_document(
    doc_id: str,
    sentences: Sequence[Sequence[str]],
    bpe: BpeModel | None = None,
    lemmas: Sequence[Sequence[str]] | None = None,
    heads: Sequence[Sequence[int]] | None = None,
    coref_chains: Sequence[Sequence[Mention]] = (),
) -> AnnotatedDocument:
    """Assemble an :class:`AnnotatedDocument` from in-memory annotations.

    ``heads`` follows the CoNLL-U convention: 1-based head positions within the
    sentence, 0 for the root, negative for "unknown".
    """
    toks, arcs, g = [], [], 0
    for m, words in enumerate(sentences):
        sent = []
        base = g
        for i, w in enumerate(words):
            lemma = lemmas[m][i] if lemmas is not None and lemmas[m][i] not in ("", "_") else w
            sent.append(Token(w, lemma.lower(), m, i, g))
            g += 1
        if heads is not None:
            for i, h in enumerate(heads[m]):
                if h > 0:
                    arcs.append((base + h - 1, base + i))
        toks.append(sent)
    chains = [[tuple(int(v) for v in mention) for mention in chain] for chain in coref_chains]
    subwords = [bpe.encode_word(t.surface) for s in toks for t in s] if bpe is not None else []
    doc = AnnotatedDocument(doc_id, toks, arcs, chains, subwords)
    validate_document(doc)
    return doc


def validate_document(doc: AnnotatedDocument) -> None:
    sent_of = doc.sentence_of()
    n = len(sent_of)
    for head, dep in doc.dep_arcs:
        if not (0 <= head < n and 0 <= dep < n) or sent_of[head] != sent_of[dep]:
            raise IngestError(f"{doc.doc_id}: dependency arc ({head}, {dep}) crosses sentences")
    for chain in doc.coref_chains:
        for mention in chain:
            _check_mention(doc, mention, f"{doc.doc_id}")
    if doc.subword_map and (
        len(doc.subword_map) != n or any(len(ids) == 0 for ids in doc.subword_map)
    ):
        raise IngestError(f"{doc.doc_id}: subword map must cover every token")


def _check_mention(doc: AnnotatedDocument, mention, where: str) -> None:
    if len(mention) != 3:
        raise IngestError(f"{where}: malformed coref mention {list(mention)}")
    s, start, end = mention
    if not 0 <= s < len(doc.sentences) or not 0 <= start <= end < len(doc.sentences[s]):
        raise IngestError(f"{where}: coref mention {list(mention)} out of sentence bounds")


def read_corpus(path: str | os.PathLike) -> list[list[list[str]]]:
    """Documents of sentences of words; a blank line ends a document."""
    docs: list[list[list[str]]] = []
    current: list[list[str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            words = line.split()
            if words:
                current.append(words)
            elif current:
                docs.append(current)
                current = []
    if current:
        docs.append(current)
    return docs


def write_corpus(path: str | os.PathLike, docs: Sequence[Sequence[Sequence[str]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n\n".join("\n".join(" ".join(s) for s in doc) for doc in docs))
        fh.write("\n")


def read_conllu(path: str | os.PathLike) -> list[list[tuple[str, str, int]]]:
    """Sentences as lists of (form, lemma, head) rows.

    Multi-word token ranges and empty nodes are skipped; head is -1 when the
    HEAD column is unspecified.
    """
    sentences, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if rows:
                    sentences.append(rows)
                    rows = []
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise IngestError(f"{path}:{lineno}: expected 10 CoNLL-U columns, got {len(cols)}")
            if "-" in cols[0] or "." in cols[0]:
                continue
            head = int(cols[6]) if cols[6].isdigit() else -1
            rows.append((cols[1], cols[2], head))
    if rows:
        sentences.append(rows)
    return sentences


def read_coref(path: str | os.PathLike) -> dict[str, tuple[int, list]]:
    """Map doc_id -> (line number, chains) from a JSON Lines file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc_id = str(record["doc_id"])
                chains = record["chains"]
                if not isinstance(chains, list):
                    raise TypeError("chains must be a list")
                parsed = []
                for chain in chains:
                    mentions = []
                    for mention in chain:
                        if not isinstance(mention, list) or len(mention) != 3:
                            raise TypeError(f"mention {mention!r} is not [sent, start, end]")
                        mentions.append(tuple(int(v) for v in mention))
                    parsed.append(mentions)
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}: line {lineno}: malformed coref record ({exc})") from None
            out[doc_id] = (lineno, parsed)
    return out


def load_documents(
    corpus_path: str | os.PathLike,
    conllu_path: str | os.PathLike | None,
    coref_path: str | os.PathLike | None,
    bpe: BpeModel | None,
    doc_prefix: str = "doc",
) -> list[AnnotatedDocument]:
    """Read a corpus and attach whatever annotations exist.

    Documents are numbered ``{doc_prefix}{index}`` in file order; coreference
    records refer to those ids.  Missing annotation files are allowed.
    """
    raw = read_corpus(corpus_path)
    conllu = None
    if conllu_path is not None and os.path.exists(conllu_path):
        conllu = read_conllu(conllu_path)
        n_sent = sum(len(d) for d in raw)
        if len(conllu) != n_sent:
            raise IngestError(
                f"CoNLL-U has {len(conllu)} sentences but the corpus has {n_sent}"
            )
    coref = read_coref(coref_path) if coref_path is not None and os.path.exists(coref_path) else {}

    docs, cursor = [], 0
    for d, sentences in enumerate(raw):
        doc_id = f"{doc_prefix}{d}"
        lemmas = heads = None
        if conllu is not None:
            rows = conllu[cursor: cursor + len(sentences)]
            lemmas, heads = [], []
            for m, (words, sent_rows) in enumerate(zip(sentences, rows)):
                if len(words) != len(sent_rows):
                    raise IngestError(
                        f"{doc_id}: sentence {m} has {len(words)} corpus tokens "
                        f"but {len(sent_rows)} CoNLL-U tokens"
                    )
                lemmas.append([r[1] for r in sent_rows])
                heads.append([r[2] for r in sent_rows])
        cursor += len(sentences)
        lineno, chains = coref.get(doc_id, (None, []))
        try:
            doc = make_document(doc_id, sentences, bpe, lemmas, heads, chains)
        except IngestError as exc:
            if lineno is not None:
                raise IngestError(f"{coref_path}: line {lineno}: {exc}") from None
            raise
        docs.append(doc)
    unknown = set(coref) - {d.doc_id for d in docs}
    if unknown:
        first = min(coref[k][0] for k in unknown)
        raise IngestError(f"{coref_path}: line {first}: unknown doc_id")
    return docs
