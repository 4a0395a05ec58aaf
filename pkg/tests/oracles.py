"""Straight-line reference implementations used as test oracles.

These recompute everything from raw post text with plain Python and share no
code with the package beyond tokenization.
"""

import math
from collections import Counter

from groupscope.textproc import tokenize


class BruteForceGroup:
    """Every statistic of one group recomputed from scratch."""

    def __init__(self, corpus, group_id):
        self.docs = {p.post_id: tokenize(p.text) for p in corpus.posts.values() if p.group_id == group_id}
        self.n = len(self.docs)
        self.avgdl = sum(len(t) for t in self.docs.values()) / self.n if self.n else 0.0
        self.df = Counter()
        for toks in self.docs.values():
            self.df.update(set(toks))

    def bm25(self, terms, post_id, k1=1.2, b=0.75):
        tokens = self.docs[post_id]
        tf = Counter(tokens)
        total = 0.0
        for term in set(terms):
            if tf[term] == 0:
                continue
            df = self.df[term]
            idf = math.log(1 + (self.n - df + 0.5) / (df + 0.5))
            total += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(tokens) / self.avgdl))
        return total

    def tfidf(self, terms, post_id):
        tokens = self.docs[post_id]
        tf = Counter(tokens)
        total = 0.0
        for term in set(terms):
            if tf[term]:
                total += (1 + math.log(tf[term])) * math.log(self.n / self.df[term])
        return total / math.sqrt(len(tokens)) if tokens else 0.0

    def search(self, terms, k, k1=1.2, b=0.75):
        """Score every post matching at least one term, sort by (-bm25, post_id)."""
        terms = set(terms)
        scored = [(pid, self.bm25(terms, pid, k1, b)) for pid, toks in self.docs.items() if terms & set(toks)]
        scored.sort(key=lambda t: (-t[1], t[0]))
        return scored[:k]


def exact_knn(post_ids, vectors, q, k):
    sims = [(pid, float(sum(float(a) * float(b) for a, b in zip(v, q)))) for pid, v in zip(post_ids, vectors)]
    sims.sort(key=lambda t: (-t[1], t[0]))
    return sims[:k]


_ORDER = {"I": 0, "S": 1, "R": 2}


def aggregate_table(triple: str) -> str:
    """Rule table for three rounds over letters R/S/I/E (error)/K (skip), written case by case."""
    graded = [c for c in triple if c in _ORDER]
    if not graded:
        return "K" if "K" in triple else "E"
    if len(graded) == 1:
        return graded[0]
    if len(graded) == 2:
        a, b = graded
        return a if a == b else min(a, b, key=_ORDER.get)  # no majority: lower of the two
    for c in "RSI":
        if graded.count(c) >= 2:
            return c
    return "S"  # one of each: the middle grade
