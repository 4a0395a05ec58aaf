"""Parallel two-path retrieval, candidate merging, score normalization and first-stage fusion."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .embedding import Embedder
from .errors import RetrievalFailed, UnknownGroup
from .lexical import LexicalIndex, search_lexical, tfidf_score
from .textproc import ProcessedQuery
from .vector_index import VectorIndex, ann_search

logger = logging.getLogger(__name__)

_METHOD_ALIASES = {"linear": "linear", "normalized-linear": "linear",
                   "rrf": "rrf", "reciprocal-rank": "rrf"}
PATHS = ("keyword", "ebr")


@dataclass
class Candidate:
    post_id: str
    from_keyword: bool = False
    from_ebr: bool = False
    bm25: float = 0.0
    tfidf: float = 0.0
    cos_sim: float = 0.0
    kw_rank: int | None = None
    ebr_rank: int | None = None
    bm25_norm: float = 0.0
    cos_norm: float = 0.0
    l1_score: float = 0.0


@dataclass(frozen=True)
class FusionConfig:
    method: str = "linear"
    w_kw: float = 0.5
    w_ebr: float = 0.5
    rrf_c: float = 60.0
    k_kw: int = 100
    k_ebr: int = 100

    def __post_init__(self):
        if self.method not in _METHOD_ALIASES:
            raise ValueError(f"unknown fusion method {self.method!r}")
        object.__setattr__(self, "method", _METHOD_ALIASES[self.method])
        if self.w_kw < 0 or self.w_ebr < 0 or not math.isclose(self.w_kw + self.w_ebr, 1.0, abs_tol=1e-9):
            raise ValueError("fusion weights must be non-negative and sum to 1")
        if not self.rrf_c > 0:
            raise ValueError("rrf_c must be > 0")
        if self.k_kw < 1 or self.k_ebr < 1:
            raise ValueError("fetch depths must be >= 1")

    def with_overrides(self, overrides: dict | None) -> "FusionConfig":
        if not overrides:
            return self
        known = {k: v for k, v in overrides.items() if k in self.__dataclass_fields__}
        if "w_kw" in known and "w_ebr" not in known:
            known["w_ebr"] = 1.0 - float(known["w_kw"])
        elif "w_ebr" in known and "w_kw" not in known:
            known["w_kw"] = 1.0 - float(known["w_ebr"])
        return replace(self, **known)


@dataclass
class BlendResult:
    candidates: list[Candidate]
    degraded: bool = False
    failures: dict[str, str] = field(default_factory=dict)
    timings_us: dict[str, int] = field(default_factory=dict)


_shared_pool: ThreadPoolExecutor | None = None


def _pool() -> ThreadPoolExecutor:
    global _shared_pool
    if _shared_pool is None:
        _shared_pool = ThreadPoolExecutor(max_workers=8, thread_name_prefix="retrieval")
    return _shared_pool


def _timed(fn, *args):
    t0 = time.perf_counter_ns()
    out = fn(*args)
    return out, (time.perf_counter_ns() - t0) // 1000


def retrieve_blended(lexical_index: LexicalIndex, vector_index: VectorIndex, embedder: Embedder,
                     group_id: str, query: ProcessedQuery, config: FusionConfig | None = None,
                     paths: tuple[str, ...] = PATHS, executor: Executor | None = None) -> BlendResult:
    """Run the keyword and embedding paths concurrently and merge their hits by post_id.

    Every merged candidate gets both tfidf and cos_sim filled in, whichever
    path found it. If one path raises, the other path's hits are returned
    with ``degraded`` set; if both raise, :class:`RetrievalFailed`.
    """
    config = config or FusionConfig()
    unknown = [p for p in paths if p not in PATHS]
    if unknown or not paths:
        raise ValueError(f"paths must be a non-empty subset of {PATHS}")

    def keyword():
        return search_lexical(lexical_index, group_id, query, config.k_kw)

    def ebr():
        t0 = time.perf_counter_ns()
        qvec = embedder.embed_query(query)
        hits = ann_search(vector_index, group_id, qvec, config.k_ebr)
        return qvec, hits, (time.perf_counter_ns() - t0) // 1000

    pool = executor or _pool()
    futures = {}
    if "keyword" in paths:
        futures["keyword"] = pool.submit(_timed, keyword)
    if "ebr" in paths:
        futures["ebr"] = pool.submit(ebr)

    results, failures, timings = {}, {}, {}
    unknown_group = None
    for name, fut in futures.items():
        try:
            out = fut.result()
        except UnknownGroup as exc:
            unknown_group = exc
        except Exception as exc:  # noqa: BLE001 - degrade-and-warn
            failures[name] = f"{type(exc).__name__}: {exc}"
        else:
            if name == "keyword":
                results[name], timings["keyword"] = out
            else:
                qvec, hits, timings["ebr"] = out
                results[name] = (qvec, hits)
    if unknown_group is not None:
        raise unknown_group
    if failures and not results:
        raise RetrievalFailed(failures)
    if failures:
        logger.warning("degraded result for group %s: %s", group_id, failures)

    merged: dict[str, Candidate] = {}
    for rank, hit in enumerate(results.get("keyword", []), start=1):
        merged[hit.post_id] = Candidate(hit.post_id, from_keyword=True, bm25=hit.bm25,
                                        tfidf=hit.tfidf, kw_rank=rank)
    qvec = None
    if "ebr" in results:
        qvec, hits = results["ebr"]
        for rank, (pid, sim) in enumerate(hits, start=1):
            c = merged.get(pid)
            if c is None:
                c = merged[pid] = Candidate(pid)
            c.from_ebr = True
            c.cos_sim = sim
            c.ebr_rank = rank

    # backfill whichever feature family the finding path did not supply
    for c in merged.values():
        if not c.from_keyword:
            c.tfidf = tfidf_score(lexical_index, group_id, query, c.post_id)
    missing_cos = [c for c in merged.values() if not c.from_ebr]
    if missing_cos:
        try:
            if qvec is None:
                qvec = embedder.embed_query(query)
            sims = vector_index.vectors_for(group_id, [c.post_id for c in missing_cos]) @ qvec
            for c, s in zip(missing_cos, sims.tolist()):
                c.cos_sim = s
        except Exception as exc:  # noqa: BLE001
            failures.setdefault("ebr_backfill", f"{type(exc).__name__}: {exc}")

    candidates = sorted(merged.values(), key=lambda c: c.post_id)
    return BlendResult(candidates, degraded=bool(failures), failures=failures, timings_us=timings)


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    span = hi - lo
    return [min(1.0, max(0.0, (v - lo) / span)) for v in values]


def normalize_scores(candidates: list[Candidate]) -> list[Candidate]:
    """Per-query min-max of bm25 over keyword hits and cos_sim over embedding hits (in place)."""
    kw = [c for c in candidates if c.from_keyword]
    eb = [c for c in candidates if c.from_ebr]
    for c in candidates:
        c.bm25_norm = 0.0
        c.cos_norm = 0.0
    if kw:
        for c, v in zip(kw, _minmax([c.bm25 for c in kw])):
            c.bm25_norm = v
    if eb:
        for c, v in zip(eb, _minmax([c.cos_sim for c in eb])):
            c.cos_norm = v
    return candidates


def fuse_l1(candidates: list[Candidate], config: FusionConfig | None = None) -> list[Candidate]:
    config = config or FusionConfig()
    for c in candidates:
        if config.method == "linear":
            c.l1_score = config.w_kw * c.bm25_norm + config.w_ebr * c.cos_norm
        else:
            s = 0.0
            if c.kw_rank is not None:
                s += 1.0 / (config.rrf_c + c.kw_rank)
            if c.ebr_rank is not None:
                s += 1.0 / (config.rrf_c + c.ebr_rank)
            c.l1_score = s
    return sorted(candidates, key=lambda c: (-c.l1_score, c.post_id))
