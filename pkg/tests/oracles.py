"""Independent reference implementations used as test oracles.

Each one is written the slow, obvious way and shares no code with the
package beyond plain data containers.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, deque

import numpy as np


def brute_pair_counts(word_freqs: dict) -> Counter:
    """Adjacent symbol pair counts, weighted by word frequency."""
    counts = Counter()
    for symbols, freq in word_freqs.items():
        for i in range(len(symbols) - 1):
            counts[(symbols[i], symbols[i + 1])] += freq
    return counts


def replay_bpe(merges, word, eow="</w>"):
    """Segment ``word`` by repeatedly applying the highest-priority merge present."""
    symbols = list(word[:-1]) + [word[-1] + eow]
    while True:
        best = None
        for rank, (a, b) in enumerate(merges):
            if any(symbols[i] == a and symbols[i + 1] == b for i in range(len(symbols) - 1)):
                best = (a, b)
                break
        if best is None:
            return symbols
        out, i = [], 0
        while i < len(symbols):
            if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                out.append(symbols[i] + symbols[i + 1])
                i += 2
            else:
                out.append(symbols[i])
                i += 1
        symbols = out


def scan_relations(words, lemmas, sent_of, arcs, coref_heads):
    """All-pairs scan producing ``{(u, v, label)}`` with labels as strings.

    ``words``/``lemmas``/``sent_of`` are per global index; ``coref_heads`` is a
    list of chains of head indices in mention order.
    """
    n = len(words)
    edges = set()
    for u in range(n):
        for v in range(n):
            if u == v:
                continue
            if sent_of[u] == sent_of[v] and abs(u - v) == 1:
                edges.add((u, v, "adjacency"))
            if (u, v) in arcs:
                edges.add((u, v, "dependency"))
            if u < v and (
                words[u].lower() == words[v].lower() or lemmas[u].lower() == lemmas[v].lower()
            ):
                edges.add((u, v, "lexical"))
    for chain in coref_heads:
        for a, b in zip(chain, chain[1:]):
            if a != b:
                edges.add((min(a, b), max(a, b), "coreference"))
    return edges


def bfs_within(n_nodes, undirected_pairs, sources, radius):
    adj = {v: set() for v in range(n_nodes)}
    for u, v in undirected_pairs:
        adj[u].add(v)
        adj[v].add(u)
    dist = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if dist[u] == radius:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return set(dist)


def loop_propagation(a):
    """``D^-1/2 A D^-1/2`` with in-degree ``D(i) = sum_j A(j, i)``, by loops."""
    n = len(a)
    deg = [sum(a[j][i] for j in range(n)) for i in range(n)]
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if a[i][j] and deg[i] > 0 and deg[j] > 0:
                out[i][j] = a[i][j] / math.sqrt(deg[i]) / math.sqrt(deg[j])
    return np.array(out)


def loop_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return np.array([[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(n)] for i in range(m)])


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def loop_gcn_pass(h, p, w, b):
    """``sigmoid(P (H W + B))`` elementwise."""
    hw = loop_matmul(h, w) + np.asarray(b)[None, :]
    z = loop_matmul(p, hw)
    return np.vectorize(_sigmoid)(z)


def loop_type_attention(h, outs):
    n, d = h.shape
    res = np.zeros((n, d))
    alphas = np.zeros((n, 3))
    for i in range(n):
        scores = [sum(h[i, k] * o[i, k] for k in range(d)) / math.sqrt(d) for o in outs]
        top = max(scores)
        ex = [math.exp(s - top) for s in scores]
        z = sum(ex)
        for t in range(3):
            alphas[i, t] = ex[t] / z
            res[i] += alphas[i, t] * outs[t][i]
    return res, alphas


def loop_attention(q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, heads, mask=None):
    """Multi-head attention for one example, head by head, query by query."""
    tq, d = q_in.shape
    tk = kv_in.shape[0]
    dh = d // heads
    q, k, v = q_in @ wq + bq, kv_in @ wk + bk, kv_in @ wv + bv
    out = np.zeros((tq, d))
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        for i in range(tq):
            keys = [j for j in range(tk) if mask is None or mask[i][j]]
            if not keys:
                continue
            s = [float(q[i, sl] @ k[j, sl]) / math.sqrt(dh) for j in keys]
            top = max(s)
            e = [math.exp(x - top) for x in s]
            z = sum(e)
            for w_, j in zip(e, keys):
                out[i, sl] += (w_ / z) * v[j, sl]
    return out @ wo + bo


def exhaustive_best(table, alpha, eos):
    """Enumerate every complete sequence under a position-indexed table."""
    cap, vocab = table.shape
    best, best_key = None, None
    for length in range(1, cap + 1):
        for seq in itertools.product(range(vocab), repeat=length):
            if any(t == eos for t in seq[:-1]):
                continue
            if length < cap and seq[-1] != eos:
                continue
            logp = sum(table[i, t] for i, t in enumerate(seq))
            score = logp / (((5 + length) / 6) ** alpha)
            key = (-score, seq)
            if best_key is None or key < best_key:
                best, best_key = seq, key
    return best


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
