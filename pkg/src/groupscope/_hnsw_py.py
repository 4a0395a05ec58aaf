"""Pure-Python layered proximity-graph kernels (fallback for ``_hnsw_ext``).

Similarity is the dot product of unit vectors. Nodes are integer ids in
insertion order; every ordering decision uses the total order
"higher similarity first, lower id on ties", so traversal is deterministic.

Graph layout shared with the compiled kernels:
    links  int32[n_levels, n, width]  neighbor ids, -1 padded
    counts int32[n_levels, n]         live neighbors per (level, node)
"""

from __future__ import annotations

import heapq

import numpy as np


def _dots(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise dot products summed strictly left to right, the same order as the compiled loop.

    BLAS (``rows @ q``) may reorder the sum, and a last-bit difference is
    enough to flip a near-tie and grow a different graph.
    """
    rows = np.atleast_2d(rows)
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0])
    return np.add.accumulate(rows * q, axis=1)[:, -1]


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(_dots(a[None, :], b)[0])


def _search_layer(vecs, adj, q, eps, ef):
    """Best-first beam search on one layer; ``eps`` is a list of (sim, id). Returns best-first list."""
    visited = {i for _, i in eps}
    cand = [(-s, i) for s, i in eps]
    heapq.heapify(cand)
    res = [(s, -i) for s, i in eps]
    heapq.heapify(res)
    while len(res) > ef:
        heapq.heappop(res)
    while cand:
        ns, c = heapq.heappop(cand)
        if len(res) >= ef and res[0] > (-ns, -c):
            break
        nb = [e for e in adj[c] if e not in visited]
        if not nb:
            continue
        visited.update(nb)
        sims = _dots(vecs[nb], q)
        for e, s in zip(nb, sims.tolist()):
            if len(res) < ef or (s, -e) > res[0]:
                heapq.heappush(cand, (-s, e))
                heapq.heappush(res, (s, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    return [(s, -ni) for s, ni in sorted(res, reverse=True)]


def _select(vecs, ranked, limit, keep_pruned=True):
    """Diversity-aware neighbor selection over a best-first (sim, id) list."""
    chosen: list[int] = []
    pruned: list[int] = []
    for s, e in ranked:
        if len(chosen) >= limit:
            break
        if chosen and float(np.max(_dots(vecs[chosen], vecs[e]))) > s:
            pruned.append(e)
        else:
            chosen.append(e)
    if keep_pruned:
        for e in pruned:
            if len(chosen) >= limit:
                break
            chosen.append(e)
    return chosen


def build(vectors: np.ndarray, levels: np.ndarray, m: int, m0: int, ef_construction: int):
    vecs = np.ascontiguousarray(vectors, dtype=np.float64)
    n = vecs.shape[0]
    levels = np.asarray(levels, dtype=np.int32)
    n_levels = int(levels.max()) + 1 if n else 1
    adj: list[list[list[int]]] = [[[] for _ in range(n)] for _ in range(n_levels)]
    entry, top = 0, int(levels[0]) if n else 0
    for node in range(1, n):
        q = vecs[node]
        lvl = int(levels[node])
        eps = [(_dot(vecs[entry], q), entry)]
        for lc in range(top, lvl, -1):
            eps = _search_layer(vecs, adj[lc], q, eps, 1)[:1]
        for lc in range(min(lvl, top), -1, -1):
            found = _search_layer(vecs, adj[lc], q, eps, ef_construction)
            cap = m0 if lc == 0 else m
            layer = adj[lc]
            layer[node] = _select(vecs, found, m)
            for e in layer[node]:
                nbrs = layer[e]
                nbrs.append(node)
                if len(nbrs) > cap:
                    sims = _dots(vecs[nbrs], vecs[e]).tolist()
                    ranked = sorted(zip(sims, nbrs), key=lambda t: (-t[0], t[1]))
                    layer[e] = _select(vecs, ranked, cap)
            eps = found
        if lvl > top:
            entry, top = node, lvl
    links = np.full((n_levels, n, m0), -1, dtype=np.int32)
    counts = np.zeros((n_levels, n), dtype=np.int32)
    for lc in range(n_levels):
        for i, nbrs in enumerate(adj[lc]):
            counts[lc, i] = len(nbrs)
            links[lc, i, :len(nbrs)] = nbrs
    return links, counts, entry


def _adjacency(links, counts, level):
    return [row[:c].tolist() for row, c in zip(links[level], counts[level])]


class GraphSearcher:
    """Query-time view over a built graph; adjacency lists are materialized once."""

    def __init__(self, vectors, links, counts, entry):
        self.vecs = np.ascontiguousarray(vectors, dtype=np.float64)
        self.entry = int(entry)
        self.adj = [_adjacency(links, counts, lc) for lc in range(links.shape[0])]
        # the entry point sits on the highest level
        self.top = links.shape[0] - 1

    def search(self, q: np.ndarray, ef: int):
        if self.vecs.shape[0] == 0:
            return np.zeros(0, dtype=np.int32), np.zeros(0)
        q = np.ascontiguousarray(q, dtype=np.float64)
        eps = [(_dot(self.vecs[self.entry], q), self.entry)]
        for lc in range(self.top, 0, -1):
            eps = _search_layer(self.vecs, self.adj[lc], q, eps, 1)[:1]
        found = _search_layer(self.vecs, self.adj[0], q, eps, ef)
        ids = np.fromiter((i for _, i in found), dtype=np.int32, count=len(found))
        sims = np.fromiter((s for s, _ in found), dtype=np.float64, count=len(found))
        return ids, sims
