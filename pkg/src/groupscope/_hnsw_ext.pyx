# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled layered proximity-graph kernels.

Mirrors ``_hnsw_py`` step for step (same traversal order, same tie-breaks,
same graph layout); only the arithmetic runs in C with the GIL released.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, calloc, free

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(d):
        s += a[i] * b[i]
    return s


cdef inline bint _better(double s1, int i1, double s2, int i2) noexcept nogil:
    return s1 > s2 or (s1 == s2 and i1 < i2)


cdef struct Heap:
    double* sims
    int* ids
    int size
    int worst_on_top


cdef inline bint _above(Heap* h, double s1, int i1, double s2, int i2) noexcept nogil:
    if h.worst_on_top:
        return _better(s2, i2, s1, i1)
    return _better(s1, i1, s2, i2)


cdef void _push(Heap* h, double s, int i) noexcept nogil:
    cdef int pos = h.size
    cdef int parent
    h.size += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _above(h, s, i, h.sims[parent], h.ids[parent]):
            h.sims[pos] = h.sims[parent]
            h.ids[pos] = h.ids[parent]
            pos = parent
        else:
            break
    h.sims[pos] = s
    h.ids[pos] = i


cdef void _pop(Heap* h) noexcept nogil:
    cdef int pos = 0
    cdef int child
    cdef double s
    cdef int i
    h.size -= 1
    if h.size == 0:
        return
    s = h.sims[h.size]
    i = h.ids[h.size]
    while True:
        child = 2 * pos + 1
        if child >= h.size:
            break
        if child + 1 < h.size and _above(h, h.sims[child + 1], h.ids[child + 1], h.sims[child], h.ids[child]):
            child += 1
        if _above(h, h.sims[child], h.ids[child], s, i):
            h.sims[pos] = h.sims[child]
            h.ids[pos] = h.ids[child]
            pos = child
        else:
            break
    h.sims[pos] = s
    h.ids[pos] = i


cdef struct Graph:
    const double* vecs
    Py_ssize_t n
    Py_ssize_t d
    int* links
    int* counts
    int width
    # scratch
    int* visited
    int tag
    double* cs
    int* ci
    double* ws
    int* wi


cdef inline int* _row(Graph* g, int level, int node) noexcept nogil:
    return g.links + (<Py_ssize_t>level * g.n + node) * g.width


cdef int _search_layer(Graph* g, const double* q, const double* ep_s, const int* ep_i, int n_ep,
                       int ef, int level, double* out_s, int* out_i) noexcept nogil:
    cdef Heap cand
    cdef Heap res
    cdef int j, c, e, cnt, m
    cdef double s, cs_
    cdef int* row
    cand.sims = g.cs
    cand.ids = g.ci
    cand.size = 0
    cand.worst_on_top = 0
    res.sims = g.ws
    res.ids = g.wi
    res.size = 0
    res.worst_on_top = 1
    g.tag += 1
    for j in range(n_ep):
        g.visited[ep_i[j]] = g.tag
        _push(&cand, ep_s[j], ep_i[j])
        _push(&res, ep_s[j], ep_i[j])
    while res.size > ef:
        _pop(&res)
    while cand.size > 0:
        cs_ = cand.sims[0]
        c = cand.ids[0]
        _pop(&cand)
        if res.size >= ef and _better(res.sims[0], res.ids[0], cs_, c):
            break
        row = _row(g, level, c)
        cnt = g.counts[<Py_ssize_t>level * g.n + c]
        for j in range(cnt):
            e = row[j]
            if g.visited[e] == g.tag:
                continue
            g.visited[e] = g.tag
            s = _dot(q, g.vecs + <Py_ssize_t>e * g.d, g.d)
            if res.size < ef or _better(s, e, res.sims[0], res.ids[0]):
                _push(&cand, s, e)
                _push(&res, s, e)
                if res.size > ef:
                    _pop(&res)
    m = res.size
    for j in range(m - 1, -1, -1):
        out_s[j] = res.sims[0]
        out_i[j] = res.ids[0]
        _pop(&res)
    return m


cdef int _select(Graph* g, const double* rs, const int* ri, int n_r, int limit,
                 int* out, int* pruned) noexcept nogil:
    cdef int n_out = 0
    cdef int n_pruned = 0
    cdef int j, r, e
    cdef bint keep
    for j in range(n_r):
        if n_out >= limit:
            break
        e = ri[j]
        keep = 1
        for r in range(n_out):
            if _dot(g.vecs + <Py_ssize_t>out[r] * g.d, g.vecs + <Py_ssize_t>e * g.d, g.d) > rs[j]:
                keep = 0
                break
        if keep:
            out[n_out] = e
            n_out += 1
        else:
            pruned[n_pruned] = e
            n_pruned += 1
    for j in range(n_pruned):
        if n_out >= limit:
            break
        out[n_out] = pruned[j]
        n_out += 1
    return n_out


cdef void _sort_desc(double* s, int* ids, int n) noexcept nogil:
    # insertion sort; lists are at most width + 1 long
    cdef int a, b
    cdef double ks
    cdef int ki
    for a in range(1, n):
        ks = s[a]
        ki = ids[a]
        b = a - 1
        while b >= 0 and _better(ks, ki, s[b], ids[b]):
            s[b + 1] = s[b]
            ids[b + 1] = ids[b]
            b -= 1
        s[b + 1] = ks
        ids[b + 1] = ki


cdef int _alloc_scratch(Graph* g, int pool) noexcept nogil:
    g.visited = <int*> calloc(g.n if g.n > 0 else 1, sizeof(int))
    g.tag = 0
    g.cs = <double*> malloc((g.n + pool + 1) * sizeof(double))
    g.ci = <int*> malloc((g.n + pool + 1) * sizeof(int))
    g.ws = <double*> malloc((g.n + pool + 1) * sizeof(double))
    g.wi = <int*> malloc((g.n + pool + 1) * sizeof(int))
    if g.visited == NULL or g.cs == NULL or g.ci == NULL or g.ws == NULL or g.wi == NULL:
        return -1
    return 0


cdef void _free_scratch(Graph* g) noexcept nogil:
    free(g.visited)
    free(g.cs)
    free(g.ci)
    free(g.ws)
    free(g.wi)


def build(vectors, levels, int m, int m0, int ef_construction):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] vecs = np.ascontiguousarray(vectors, dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] lv = np.ascontiguousarray(levels, dtype=np.int32)
    cdef Py_ssize_t n = vecs.shape[0]
    cdef int n_levels = int(lv.max()) + 1 if n else 1
    cdef cnp.ndarray[cnp.int32_t, ndim=3, mode="c"] links = np.full((n_levels, n, m0), -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=2, mode="c"] counts = np.zeros((n_levels, n), dtype=np.int32)
    cdef Graph g
    cdef int pool = ef_construction if ef_construction > m0 else m0
    cdef int node, lvl, lc, top = 0, entry = 0, nf, ns, j, k, e, cap, cnt
    cdef double* eps_s
    cdef int* eps_i
    cdef double* fs
    cdef int* fi
    cdef int* sel
    cdef int* pruned
    cdef double* tmp_s
    cdef int* tmp_i
    cdef int n_ep
    cdef int* row
    if n == 0:
        return links, counts, 0
    g.vecs = &vecs[0, 0]
    g.n = n
    g.d = vecs.shape[1]
    g.links = <int*> &links[0, 0, 0]
    g.counts = <int*> &counts[0, 0]
    g.width = m0
    if _alloc_scratch(&g, pool) != 0:
        _free_scratch(&g)
        raise MemoryError()
    eps_s = <double*> malloc((pool + 1) * sizeof(double))
    eps_i = <int*> malloc((pool + 1) * sizeof(int))
    fs = <double*> malloc((pool + 1) * sizeof(double))
    fi = <int*> malloc((pool + 1) * sizeof(int))
    sel = <int*> malloc((pool + m0 + 2) * sizeof(int))
    pruned = <int*> malloc((pool + m0 + 2) * sizeof(int))
    tmp_s = <double*> malloc((m0 + 2) * sizeof(double))
    tmp_i = <int*> malloc((m0 + 2) * sizeof(int))
    top = lv[0]
    with nogil:
        for node in range(1, n):
            lvl = lv[node]
            eps_i[0] = entry
            eps_s[0] = _dot(g.vecs + <Py_ssize_t>node * g.d, g.vecs + <Py_ssize_t>entry * g.d, g.d)
            n_ep = 1
            lc = top
            while lc > lvl:
                _search_layer(&g, g.vecs + <Py_ssize_t>node * g.d, eps_s, eps_i, 1, 1, lc, fs, fi)
                eps_s[0] = fs[0]
                eps_i[0] = fi[0]
                lc -= 1
            lc = lvl if lvl < top else top
            while lc >= 0:
                nf = _search_layer(&g, g.vecs + <Py_ssize_t>node * g.d, eps_s, eps_i, n_ep,
                                   ef_construction, lc, fs, fi)
                cap = m0 if lc == 0 else m
                ns = _select(&g, fs, fi, nf, m, sel, pruned)
                row = _row(&g, lc, node)
                for j in range(ns):
                    row[j] = sel[j]
                g.counts[<Py_ssize_t>lc * n + node] = ns
                for j in range(ns):
                    e = sel[j]
                    row = _row(&g, lc, e)
                    cnt = g.counts[<Py_ssize_t>lc * n + e]
                    if cnt < cap:
                        row[cnt] = node
                        g.counts[<Py_ssize_t>lc * n + e] = cnt + 1
                    else:
                        for k in range(cnt):
                            tmp_i[k] = row[k]
                        tmp_i[cnt] = node
                        for k in range(cnt + 1):
                            tmp_s[k] = _dot(g.vecs + <Py_ssize_t>tmp_i[k] * g.d, g.vecs + <Py_ssize_t>e * g.d, g.d)
                        _sort_desc(tmp_s, tmp_i, cnt + 1)
                        cnt = _select(&g, tmp_s, tmp_i, cnt + 1, cap, sel + ns, pruned)
                        for k in range(cnt):
                            row[k] = sel[ns + k]
                        for k in range(cnt, m0):
                            row[k] = -1
                        g.counts[<Py_ssize_t>lc * n + e] = cnt
                for j in range(nf):
                    eps_s[j] = fs[j]
                    eps_i[j] = fi[j]
                n_ep = nf
                lc -= 1
            if lvl > top:
                top = lvl
                entry = node
    _free_scratch(&g)
    free(eps_s)
    free(eps_i)
    free(fs)
    free(fi)
    free(sel)
    free(pruned)
    free(tmp_s)
    free(tmp_i)
    return links, counts, entry


cdef class GraphSearcher:
    """Query-time view over a built graph. Thread-safe: scratch space is per call."""

    cdef cnp.ndarray vecs
    cdef cnp.ndarray links
    cdef cnp.ndarray counts
    cdef int entry
    cdef int top

    def __init__(self, vectors, links, counts, entry):
        self.vecs = np.ascontiguousarray(vectors, dtype=np.float64)
        self.links = np.ascontiguousarray(links, dtype=np.int32)
        self.counts = np.ascontiguousarray(counts, dtype=np.int32)
        self.entry = int(entry)
        self.top = self.links.shape[0] - 1

    def search(self, q, int ef):
        cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] qv = np.ascontiguousarray(q, dtype=np.float64)
        cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] vecs = self.vecs
        cdef cnp.ndarray[cnp.int32_t, ndim=3, mode="c"] links = self.links
        cdef cnp.ndarray[cnp.int32_t, ndim=2, mode="c"] counts = self.counts
        cdef Py_ssize_t n = vecs.shape[0]
        if n == 0:
            return np.zeros(0, dtype=np.int32), np.zeros(0)
        cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] out_i = np.empty(max(ef, 1), dtype=np.int32)
        cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] out_s = np.empty(max(ef, 1), dtype=np.float64)
        cdef Graph g
        cdef double ep_s
        cdef int ep_i
        cdef int lc, m = 0
        g.vecs = &vecs[0, 0]
        g.n = n
        g.d = vecs.shape[1]
        g.links = <int*> &links[0, 0, 0]
        g.counts = <int*> &counts[0, 0]
        g.width = links.shape[2]
        if _alloc_scratch(&g, ef) != 0:
            _free_scratch(&g)
            raise MemoryError()
        with nogil:
            ep_i = self.entry
            ep_s = _dot(&qv[0], g.vecs + <Py_ssize_t>ep_i * g.d, g.d)
            lc = self.top
            while lc > 0:
                _search_layer(&g, &qv[0], &ep_s, &ep_i, 1, 1, lc, &out_s[0], <int*> &out_i[0])
                ep_s = out_s[0]
                ep_i = out_i[0]
                lc -= 1
            m = _search_layer(&g, &qv[0], &ep_s, &ep_i, 1, ef, 0, &out_s[0], <int*> &out_i[0])
        _free_scratch(&g)
        return out_i[:m].copy(), out_s[:m].copy()
