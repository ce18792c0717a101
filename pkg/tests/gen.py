"""Random annotated documents for property and oracle tests."""

import numpy as np

from docgraph.tokenize import make_document

VOCAB = ["cat", "Cat", "dog", "runs", "ran", "the", "The", "a", "it", "house", "houses", "big"]
LEMMA = {"ran": "run", "runs": "run", "houses": "house", "Cat": "cat", "The": "the"}


def random_heads(rng, n):
    """A random projective-or-not tree: each word points at an earlier one or at root."""
    heads = [0] * n
    root = int(rng.integers(n))
    for i in range(n):
        if i == root:
            continue
        choices = [j for j in range(n) if j != i]
        heads[i] = int(rng.choice(choices)) + 1
    # parse trees are not required to be acyclic for graph construction, but avoid self arcs
    return heads


def random_document(rng, max_words=50, max_sentences=6, with_heads=True, with_coref=True, doc_id="d"):
    n_sent = int(rng.integers(1, max_sentences + 1))
    budget = max_words
    sentences = []
    for _ in range(n_sent):
        if budget <= 0:
            break
        length = int(rng.integers(1, min(10, budget) + 1))
        budget -= length
        sentences.append([str(rng.choice(VOCAB)) for _ in range(length)])
    lemmas = [[LEMMA.get(w, w) for w in s] for s in sentences]
    heads = None
    if with_heads:
        heads = [random_heads(rng, len(s)) if rng.random() < 0.8 else [-1] * len(s) for s in sentences]
    chains = []
    if with_coref:
        for _ in range(int(rng.integers(0, 3))):
            k = int(rng.integers(1, 4))
            chain = []
            for _ in range(k):
                s = int(rng.integers(len(sentences)))
                a = int(rng.integers(len(sentences[s])))
                b = int(rng.integers(a, len(sentences[s])))
                chain.append((s, a, b))
            chains.append(chain)
    doc = make_document(doc_id, sentences, lemmas=lemmas, heads=heads, coref_chains=chains)
    return doc, sentences, lemmas, heads, chains


def head_of_span(doc_heads, offsets, mention):
    """Independent mention head: first span word governed from outside the span."""
    s, a, b = mention
    heads = doc_heads[s] if doc_heads is not None else None
    if heads is None or all(h <= 0 for h in heads):
        return offsets[s] + a
    for i in range(a, b + 1):
        h = heads[i]
        if h <= 0 or not (a <= h - 1 <= b):
            return offsets[s] + i
    return offsets[s] + a


def arcs_of(heads, offsets):
    arcs = set()
    if heads is None:
        return arcs
    for m, hs in enumerate(heads):
        for i, h in enumerate(hs):
            if h > 0 and h - 1 != i:
                arcs.add((offsets[m] + h - 1, offsets[m] + i))
    return arcs


def dense_scan(doc, sentences, lemmas, heads, chains):
    """Inputs for ``oracles.scan_relations`` built straight from the raw annotations."""
    offsets = np.cumsum([0] + [len(s) for s in sentences])[:-1].tolist()
    words = [w for s in sentences for w in s]
    lems = [l for s in lemmas for l in s]
    sent_of = [m for m, s in enumerate(sentences) for _ in s]
    coref_heads = [[head_of_span(heads, offsets, men) for men in sorted(chain)] for chain in chains]
    return words, lems, sent_of, arcs_of(heads, offsets), coref_heads


def toy_parallel(rng, n_docs=3, max_sentences=3, merges=30):
    """Small parallel documents with BPE, source graphs and target graphs attached.

    Returns ``(docs, examples, bpe_src, bpe_tgt)`` with examples flattened.
    """
    from docgraph.decode import document_contexts, target_graph
    from docgraph.tokenize import learn_bpe
    from docgraph.training import ParallelDocument, attach_contexts, sentence_examples

    raw = []
    for _ in range(n_docs):
        _, sents, lemmas, heads, chains = random_document(rng, max_words=20, max_sentences=max_sentences)
        tgt = [[w.upper() for w in reversed(s)] for s in sents]
        raw.append((sents, lemmas, heads, chains, tgt))
    bpe_src = learn_bpe([s for r in raw for s in r[0]], merges)
    bpe_tgt = learn_bpe([s for r in raw for s in r[4]], merges)
    docs = [
        ParallelDocument(
            make_document(f"doc{k}", s, bpe_src, lemmas=l, heads=h, coref_chains=c),
            make_document(f"doc{k}", t, bpe_tgt),
        )
        for k, (s, l, h, c, t) in enumerate(raw)
    ]
    src_ctx = [document_contexts(d.src) for d in docs]
    tgt_ctx = [document_contexts(d.tgt, target_graph(d.tgt)) for d in docs]
    grouped = attach_contexts(sentence_examples(docs), src_ctx, tgt_ctx)
    return docs, [e for g in grouped for e in g], bpe_src, bpe_tgt
