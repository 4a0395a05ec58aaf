"""Group-scoped inverted index with BM25 and TF-IDF scoring (the keyword path)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import FormatError, GroupMismatch, UnknownGroup, UnknownPost
from .storage import pack_strings, read_container, unpack_strings, write_container
from .textproc import ProcessedQuery, tokenize

INDEX_KIND = "lexical"


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass(frozen=True)
class PostingList:
    term: str
    entries: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class LexicalHit:
    post_id: str
    bm25: float
    tfidf: float


def bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


class GroupPartition:
    """Inverted index over one group's posts; doc index i refers to ``post_ids[i]`` (ascending)."""

    def __init__(self, post_ids: tuple[str, ...], doc_len: np.ndarray,
                 postings: dict[str, tuple[np.ndarray, np.ndarray]]):
        self.post_ids = post_ids
        self.doc_len = doc_len
        self.postings = postings
        self.position = {pid: i for i, pid in enumerate(post_ids)}
        self.n_docs = len(post_ids)
        self.avg_doc_len = float(doc_len.mean()) if self.n_docs else 0.0

    @classmethod
    def from_posts(cls, post_ids: tuple[str, ...], texts: list[str]) -> "GroupPartition":
        doc_len = np.zeros(len(post_ids), dtype=np.int32)
        acc: dict[str, tuple[list[int], list[int]]] = {}
        for i, text in enumerate(texts):
            tf = Counter(tokenize(text))
            doc_len[i] = sum(tf.values())
            for term, c in tf.items():
                ids, tfs = acc.setdefault(term, ([], []))
                ids.append(i)
                tfs.append(c)
        postings = {t: (np.asarray(ids, dtype=np.int32), np.asarray(tfs, dtype=np.int32))
                    for t, (ids, tfs) in sorted(acc.items())}
        return cls(post_ids, doc_len, postings)

    def doc_freq(self, term: str) -> int:
        p = self.postings.get(term)
        return 0 if p is None else len(p[0])

    def tf(self, term: str, doc: int) -> int:
        p = self.postings.get(term)
        if p is None:
            return 0
        ids, tfs = p
        j = int(np.searchsorted(ids, doc))
        return int(tfs[j]) if j < len(ids) and ids[j] == doc else 0

    def bm25_contrib(self, term: str, params: Bm25Params) -> tuple[np.ndarray, np.ndarray]:
        """(doc indices, BM25 contribution) for every post containing ``term``."""
        ids, tfs = self.postings[term]
        idf = bm25_idf(self.n_docs, len(ids))
        tf = tfs.astype(np.float64)
        norm = params.k1 * (1.0 - params.b + params.b * self.doc_len[ids] / self.avg_doc_len)
        return ids, idf * tf * (params.k1 + 1.0) / (tf + norm)

    def tfidf_contrib(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        ids, tfs = self.postings[term]
        w = (1.0 + np.log(tfs.astype(np.float64))) * math.log(self.n_docs / len(ids))
        return ids, w / np.sqrt(self.doc_len[ids].astype(np.float64))


class LexicalIndex:
    def __init__(self, partitions: dict[str, GroupPartition], params: Bm25Params):
        self.partitions = partitions
        self.params = params
        self._owner = {pid: gid for gid, part in partitions.items() for pid in part.post_ids}

    # -- stats -----------------------------------------------------------
    def partition(self, group_id: str) -> GroupPartition:
        try:
            return self.partitions[group_id]
        except KeyError:
            raise UnknownGroup(group_id) from None

    def doc_count(self, group_id: str) -> int:
        return self.partition(group_id).n_docs

    def avg_doc_len(self, group_id: str) -> float:
        return self.partition(group_id).avg_doc_len

    def doc_len(self, post_id: str) -> int:
        part, i = self._locate(post_id)
        return int(part.doc_len[i])

    def doc_freq(self, group_id: str, term: str) -> int:
        return self.partition(group_id).doc_freq(term)

    def posting_list(self, group_id: str, term: str) -> PostingList:
        part = self.partition(group_id)
        p = part.postings.get(term)
        if p is None:
            return PostingList(term, ())
        return PostingList(term, tuple((part.post_ids[i], int(tf)) for i, tf in zip(*p)))

    def terms(self, group_id: str) -> list[str]:
        return list(self.partition(group_id).postings)

    def _locate(self, post_id: str, group_id: str | None = None) -> tuple[GroupPartition, int]:
        owner = self._owner.get(post_id)
        if owner is None:
            raise UnknownPost(post_id)
        if group_id is not None and owner != group_id:
            raise GroupMismatch(post_id, group_id)
        part = self.partitions[owner]
        return part, part.position[post_id]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LexicalIndex):
            return NotImplemented
        if self.params != other.params or self.partitions.keys() != other.partitions.keys():
            return False
        for gid, a in self.partitions.items():
            b = other.partitions[gid]
            if a.post_ids != b.post_ids or not np.array_equal(a.doc_len, b.doc_len):
                return False
            if a.postings.keys() != b.postings.keys():
                return False
            for t, (ids, tfs) in a.postings.items():
                if not (np.array_equal(ids, b.postings[t][0]) and np.array_equal(tfs, b.postings[t][1])):
                    return False
        return True


def build_lexical_index(corpus: Corpus, params: Bm25Params | None = None) -> LexicalIndex:
    params = params or Bm25Params()
    parts = {}
    for gid in corpus.group_ids():
        posts = corpus.posts_in_group(gid)
        parts[gid] = GroupPartition.from_posts(tuple(p.post_id for p in posts), [p.text for p in posts])
    return LexicalIndex(parts, params)


def bm25_score(index: LexicalIndex, group_id: str, query: ProcessedQuery, post_id: str) -> float:
    index.partition(group_id)
    part, doc = index._locate(post_id, group_id)
    k1, b = index.params.k1, index.params.b
    dl = float(part.doc_len[doc])
    score = 0.0
    for term in query.terms():
        tf = part.tf(term, doc)
        if tf == 0:
            continue
        idf = bm25_idf(part.n_docs, part.doc_freq(term))
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / part.avg_doc_len))
    return score


def tfidf_score(index: LexicalIndex, group_id: str, query: ProcessedQuery, post_id: str) -> float:
    index.partition(group_id)
    part, doc = index._locate(post_id, group_id)
    if part.doc_len[doc] == 0:
        return 0.0
    score = 0.0
    for term in query.terms():
        tf = part.tf(term, doc)
        if tf:
            score += (1.0 + math.log(tf)) * math.log(part.n_docs / part.doc_freq(term))
    return score / math.sqrt(float(part.doc_len[doc]))


def search_lexical(index: LexicalIndex, group_id: str, query: ProcessedQuery, k: int) -> list[LexicalHit]:
    """OR-match over query terms, ranked by BM25 descending, ties by post_id ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    part = index.partition(group_id)
    bm25 = np.zeros(part.n_docs)
    tfidf = np.zeros(part.n_docs)
    matched = np.zeros(part.n_docs, dtype=bool)
    for term in query.terms():
        if term not in part.postings:
            continue
        ids, contrib = part.bm25_contrib(term, index.params)
        bm25[ids] += contrib
        matched[ids] = True
        ids, contrib = part.tfidf_contrib(term)
        tfidf[ids] += contrib
    docs = np.flatnonzero(matched)
    if docs.size == 0:
        return []
    # doc index order equals post_id order, so it doubles as the tie-break key
    order = docs[np.lexsort((docs, -bm25[docs]))][:k]
    return [LexicalHit(part.post_ids[i], float(bm25[i]), float(tfidf[i])) for i in order]


def save_lexical_index(index: LexicalIndex, path: str | Path) -> None:
    segments = {}
    for gid, part in index.partitions.items():
        terms = list(part.postings)
        lens = np.array([len(part.postings[t][0]) for t in terms], dtype=np.int64)
        offsets = np.zeros(len(terms) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(lens) if terms else []
        packed_terms = pack_strings(terms)
        packed_ids = pack_strings(list(part.post_ids))
        arrays = {
            "post_id_bytes": packed_ids["bytes"], "post_id_offsets": packed_ids["offsets"],
            "doc_len": part.doc_len,
            "term_bytes": packed_terms["bytes"], "term_offsets": packed_terms["offsets"],
            "posting_offsets": offsets,
            "posting_docs": np.concatenate([part.postings[t][0] for t in terms]) if terms else np.zeros(0, np.int32),
            "posting_tfs": np.concatenate([part.postings[t][1] for t in terms]) if terms else np.zeros(0, np.int32),
        }
        segments[gid] = ({"group_id": gid}, arrays)
    meta = {"k1": index.params.k1, "b": index.params.b}
    write_container(path, INDEX_KIND, meta, segments)


def load_lexical_index(path: str | Path) -> LexicalIndex:
    meta, segments = read_container(path, INDEX_KIND)
    parts = {}
    try:
        for gid, (_, a) in segments.items():
            post_ids = tuple(unpack_strings(a["post_id_bytes"], a["post_id_offsets"]))
            terms = unpack_strings(a["term_bytes"], a["term_offsets"])
            off = a["posting_offsets"]
            postings = {t: (a["posting_docs"][off[i]:off[i + 1]].astype(np.int32),
                            a["posting_tfs"][off[i]:off[i + 1]].astype(np.int32))
                        for i, t in enumerate(terms)}
            parts[gid] = GroupPartition(post_ids, a["doc_len"].astype(np.int32), postings)
        params = Bm25Params(meta["k1"], meta["b"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed lexical segment ({exc})") from None
    return LexicalIndex(parts, params)
