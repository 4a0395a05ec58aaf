"""Group-partitioned nearest-neighbor search over document-tower embeddings.

Small groups are stored flat and searched exactly. Groups above
``flat_threshold`` get a layered proximity graph built by the kernels in
:mod:`groupscope.kernels`. Node ids follow ascending post_id order, so the
kernels' "lower id on ties" rule is the same as "lower post_id on ties".
"""

from __future__ import annotations

import math
import random
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .corpus import Corpus
from .embedding import Embedder
from .errors import DimensionMismatch, FormatError, UnknownGroup
from .storage import pack_strings, read_container, unpack_strings, write_container

INDEX_KIND = "vector"


@dataclass(frozen=True)
class AnnParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    flat_threshold: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("ef values must be >= 1")
        if self.flat_threshold < 0:
            raise ValueError("flat_threshold must be >= 0")


class FlatPartition:
    kind = "flat"

    def __init__(self, post_ids: tuple[str, ...], vectors: np.ndarray):
        self.post_ids = post_ids
        self.vectors = vectors
        self.position = {pid: i for i, pid in enumerate(post_ids)}

    def __len__(self) -> int:
        return len(self.post_ids)


class GraphPartition(FlatPartition):
    kind = "graph"

    def __init__(self, post_ids, vectors, links, counts, entry, levels, backend: str | None = None):
        super().__init__(post_ids, vectors)
        self.links = links
        self.counts = counts
        self.entry = int(entry)
        self.levels = levels
        self._searcher = kernels.get_backend(backend).GraphSearcher(vectors, links, counts, entry)

    def search(self, q: np.ndarray, ef: int) -> tuple[np.ndarray, np.ndarray]:
        return self._searcher.search(q, ef)

    def reachable(self) -> int:
        """Number of nodes reachable from the entry point over the base layer."""
        if not len(self):
            return 0
        seen = np.zeros(len(self), dtype=bool)
        seen[self.entry] = True
        todo = deque([self.entry])
        while todo:
            node = todo.popleft()
            for e in self.links[0, node, :self.counts[0, node]]:
                if not seen[e]:
                    seen[e] = True
                    todo.append(int(e))
        return int(seen.sum())


def assign_levels(n: int, M: int, seed: int, group_id: str) -> np.ndarray:
    rng = random.Random(f"{seed}:{group_id}")
    ml = 1.0 / math.log(M)
    return np.array([int(-math.log(1.0 - rng.random()) * ml) for _ in range(n)], dtype=np.int32)


class VectorIndex:
    def __init__(self, dim: int, params: AnnParams, partitions: dict[str, FlatPartition],
                 embedder: dict | None = None):
        self.dim = dim
        self.params = params
        self.partitions = partitions
        # config of the document tower that produced the vectors, when known
        self.embedder = embedder

    def partition(self, group_id: str) -> FlatPartition:
        try:
            return self.partitions[group_id]
        except KeyError:
            raise UnknownGroup(group_id) from None

    def vector(self, group_id: str, post_id: str) -> np.ndarray:
        part = self.partition(group_id)
        return part.vectors[part.position[post_id]]

    def vectors_for(self, group_id: str, post_ids: list[str]) -> np.ndarray:
        part = self.partition(group_id)
        if not post_ids:
            return np.zeros((0, self.dim))
        return part.vectors[[part.position[p] for p in post_ids]]


def _make_partition(group_id: str, post_ids: tuple[str, ...], vecs: np.ndarray, params: AnnParams,
                    backend: str | None) -> FlatPartition:
    vecs = np.ascontiguousarray(vecs, dtype=np.float64)
    if len(post_ids) <= params.flat_threshold:
        return FlatPartition(post_ids, vecs)
    levels = assign_levels(len(post_ids), params.M, params.seed, group_id)
    kern = kernels.get_backend(backend)
    links, counts, entry = kern.build(vecs, levels, params.M, 2 * params.M, params.ef_construction)
    return GraphPartition(post_ids, vecs, links, counts, entry, levels, backend)


def build_from_vectors(groups: dict[str, tuple[tuple[str, ...], np.ndarray]], params: AnnParams | None = None,
                       backend: str | None = None, workers: int = 1) -> VectorIndex:
    """Index precomputed vectors; ``groups`` maps group_id -> (post_ids, vectors)."""
    params = params or AnnParams()
    dims = {v.shape[1] for _, v in groups.values() if v.size}
    if len(dims) > 1:
        raise DimensionMismatch(min(dims), max(dims))
    dim = dims.pop() if dims else 0
    items = []
    for gid, (pids, vecs) in groups.items():
        order = sorted(range(len(pids)), key=pids.__getitem__)
        items.append((gid, tuple(pids[i] for i in order), np.asarray(vecs)[order] if len(pids) else
                      np.zeros((0, dim))))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(lambda it: _make_partition(*it, params, backend), items))
    else:
        built = [_make_partition(*it, params, backend) for it in items]
    return VectorIndex(dim, params, {it[0]: part for it, part in zip(items, built)})


def build_vector_index(corpus: Corpus, embedder: Embedder, params: AnnParams | None = None,
                       backend: str | None = None, workers: int = 1) -> VectorIndex:
    groups = {}
    for gid in corpus.group_ids():
        posts = corpus.posts_in_group(gid)
        vecs = embedder.embed_docs([p.text for p in posts]) if posts else np.zeros((0, embedder.dim))
        groups[gid] = (tuple(p.post_id for p in posts), vecs)
    index = build_from_vectors(groups, params, backend, workers)
    index.dim = embedder.dim
    cfg = getattr(embedder, "config", None)
    if hasattr(cfg, "to_dict"):
        index.embedder = cfg.to_dict()
    return index


def _check_query(index: VectorIndex, qvec: np.ndarray) -> np.ndarray:
    q = np.asarray(qvec, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DimensionMismatch(index.dim, q.shape[-1] if q.ndim else 0)
    return q


def _top_k(post_ids, sims: np.ndarray, nodes: np.ndarray, k: int) -> list[tuple[str, float]]:
    order = np.lexsort((nodes, -sims))[:k]
    return [(post_ids[int(nodes[i])], float(sims[i])) for i in order]


def exact_search(index: VectorIndex, group_id: str, qvec: np.ndarray, k: int) -> list[tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    part = index.partition(group_id)
    q = _check_query(index, qvec)
    if not len(part):
        return []
    sims = part.vectors @ q
    return _top_k(part.post_ids, sims, np.arange(len(part)), k)


def ann_search(index: VectorIndex, group_id: str, qvec: np.ndarray, k: int,
               ef_search: int | None = None) -> list[tuple[str, float]]:
    """Top-k by cosine descending, post_id ascending on ties; exact on flat partitions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    part = index.partition(group_id)
    q = _check_query(index, qvec)
    if not isinstance(part, GraphPartition):
        return exact_search(index, group_id, q, k)
    ef = max(ef_search or index.params.ef_search, k)
    nodes, sims = part.search(q, ef)
    return _top_k(part.post_ids, sims, nodes, k)


def recall_at_k(ann: list[tuple[str, float]], exact: list[tuple[str, float]], k: int) -> float:
    if not exact:
        return 1.0
    truth = {pid for pid, _ in exact[:k]}
    got = {pid for pid, _ in ann[:k]}
    return len(truth & got) / min(k, len(exact))


def save_vector_index(index: VectorIndex, path: str | Path) -> None:
    segments = {}
    for gid, part in index.partitions.items():
        packed = pack_strings(list(part.post_ids))
        arrays = {"post_id_bytes": packed["bytes"], "post_id_offsets": packed["offsets"],
                  "vectors": part.vectors}
        meta = {"group_id": gid, "storage": part.kind}
        if isinstance(part, GraphPartition):
            arrays.update(links=part.links, counts=part.counts, levels=part.levels)
            meta["entry"] = part.entry
        segments[gid] = (meta, arrays)
    meta = {"dim": index.dim, "params": asdict(index.params), "embedder": index.embedder}
    write_container(path, INDEX_KIND, meta, segments)


def load_vector_index(path: str | Path, backend: str | None = None) -> VectorIndex:
    meta, segments = read_container(path, INDEX_KIND)
    try:
        params = AnnParams(**meta["params"])
        dim = int(meta["dim"])
        parts: dict[str, FlatPartition] = {}
        for gid, (smeta, a) in segments.items():
            pids = tuple(unpack_strings(a["post_id_bytes"], a["post_id_offsets"]))
            vecs = a["vectors"].reshape(len(pids), dim) if pids else np.zeros((0, dim))
            if smeta["storage"] == "graph":
                parts[gid] = GraphPartition(pids, vecs, a["links"], a["counts"], smeta["entry"], a["levels"], backend)
            elif smeta["storage"] == "flat":
                parts[gid] = FlatPartition(pids, vecs)
            else:
                raise FormatError(f"{path}: unknown storage kind {smeta['storage']!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed vector segment ({exc})") from None
    return VectorIndex(dim, params, parts, meta.get("embedder"))
