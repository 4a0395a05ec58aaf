"""End-to-end scoped search: preprocess, two-path retrieval, L1 fusion, L2 ranking."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .blend import FusionConfig, fuse_l1, normalize_scores, retrieve_blended
from .config import RETRIEVAL_MODES, EngineConfig
from .corpus import Corpus, load_corpus
from .embedding import Embedder, EmbedderConfig, HashingEmbedder
from .errors import ValidationError
from .lexical import LexicalIndex, build_lexical_index, load_lexical_index
from .ranker import MtmlModel, extract_features, load_model, rank_l2
from .textproc import DEFAULT_STOPWORDS, load_stopwords, preprocess_query
from .vector_index import VectorIndex, build_vector_index, load_vector_index

logger = logging.getLogger(__name__)

SNIPPET_CHARS = 160
_MODE_PATHS = {"blended": ("keyword", "ebr"), "keyword": ("keyword",), "ebr": ("ebr",)}


@dataclass(frozen=True)
class SerpEntry:
    post_id: str
    score: float
    from_keyword: bool
    from_ebr: bool
    snippet: str

    def to_dict(self) -> dict:
        return {"post_id": self.post_id, "score": self.score, "from_keyword": self.from_keyword,
                "from_ebr": self.from_ebr, "snippet": self.snippet}


@dataclass
class SearchResult:
    group_id: str
    query: str
    k: int
    results: list[SerpEntry]
    timings_us: dict[str, int] = field(default_factory=dict)
    degraded: bool = False
    failures: dict[str, str] = field(default_factory=dict)

    def post_ids(self) -> list[str]:
        return [r.post_id for r in self.results]

    def to_dict(self) -> dict:
        return {"group_id": self.group_id, "query": self.query, "k": self.k,
                "results": [r.to_dict() for r in self.results],
                "timing_us": dict(self.timings_us), "degraded": self.degraded}


def _read_json_map(path: str | None) -> dict[str, str] | None:
    if not path:
        return None
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{p} does not exist")
    data = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValidationError(f"{p} must hold a JSON object")
    return {str(k): str(v) for k, v in data.items()}


def _require(path: str | None, what: str) -> str:
    if not path:
        raise ValidationError(f"no {what} path configured")
    if not Path(path).exists():
        raise ValidationError(f"{what} file {path} does not exist")
    return path


class Engine:
    """Immutable bundle of loaded state; ``search`` is safe to call from many threads."""

    def __init__(self, corpus: Corpus, lexical: LexicalIndex, vector: VectorIndex, embedder: Embedder,
                 model: MtmlModel | None = None, fusion: FusionConfig | None = None,
                 stopwords: frozenset[str] | None = None, retrieval: str = "blended", now: int | None = None):
        if retrieval not in RETRIEVAL_MODES:
            raise ValueError(f"retrieval must be one of {RETRIEVAL_MODES}")
        self.corpus = corpus
        self.lexical = lexical
        self.vector = vector
        self.embedder = embedder
        self.model = model or MtmlModel.prior()
        self.fusion = fusion or FusionConfig()
        self.stopwords = DEFAULT_STOPWORDS if stopwords is None else stopwords
        self.retrieval = retrieval
        # a fixed clock keeps recency features, and so rankings, reproducible
        self.now = now if now is not None else max((p.created_at for p in corpus.posts.values()), default=0)

    @classmethod
    def from_corpus(cls, corpus: Corpus, config: EngineConfig | None = None, model: MtmlModel | None = None,
                    embedder: Embedder | None = None, backend: str | None = None) -> "Engine":
        """Build both indexes in memory."""
        config = config or EngineConfig()
        if embedder is None:
            embedder = HashingEmbedder(_embedder_config(config))
        lexical = build_lexical_index(corpus, config.bm25)
        vector = build_vector_index(corpus, embedder, config.ann, backend=backend)
        if model is None and config.paths.model:
            model = load_model(_require(config.paths.model, "model"))
        return cls(corpus, lexical, vector, embedder, model or MtmlModel.prior(config.task_weights),
                   config.fusion, _stopwords(config), config.retrieval, config.now)

    @classmethod
    def from_config(cls, config: EngineConfig, embedder: Embedder | None = None,
                    backend: str | None = None) -> "Engine":
        """Load the corpus, the persisted indexes and (optionally) a trained model."""
        p = config.paths
        corpus = load_corpus(_require(p.corpus, "corpus"))
        lexical = load_lexical_index(_require(p.lexical_index, "lexical index"))
        vector = load_vector_index(_require(p.vector_index, "vector index"), backend=backend)
        if embedder is None:
            emb_cfg = EmbedderConfig.from_dict(vector.embedder) if vector.embedder else _embedder_config(config)
            embedder = HashingEmbedder(emb_cfg)
        if embedder.dim != vector.dim:
            raise ValidationError(f"embedder dim {embedder.dim} does not match index dim {vector.dim}")
        model = load_model(_require(p.model, "model")) if p.model else MtmlModel.prior(config.task_weights)
        return cls(corpus, lexical, vector, embedder, model, config.fusion, _stopwords(config),
                   config.retrieval, config.now)

    def with_retrieval(self, mode: str) -> "Engine":
        return Engine(self.corpus, self.lexical, self.vector, self.embedder, self.model, self.fusion,
                      self.stopwords, mode, self.now)

    def search(self, group_id: str, query_text: str, k: int = 10,
               fusion: FusionConfig | dict | None = None) -> SearchResult:
        if k < 1:
            raise ValidationError("k must be >= 1")
        cfg = fusion if isinstance(fusion, FusionConfig) else self.fusion.with_overrides(fusion)
        cfg = replace(cfg, k_kw=max(cfg.k_kw, k), k_ebr=max(cfg.k_ebr, k))

        t0 = time.perf_counter_ns()
        query = preprocess_query(query_text, self.stopwords)
        t1 = time.perf_counter_ns()
        logger.debug("keyword path terms %s; embedding path text %r", query.terms(), query.base.normalized)

        blended = retrieve_blended(self.lexical, self.vector, self.embedder, group_id, query, cfg,
                                   paths=_MODE_PATHS[self.retrieval])
        t2 = time.perf_counter_ns()
        fused = fuse_l1(normalize_scores(blended.candidates), cfg)
        t3 = time.perf_counter_ns()
        rows = [(c.post_id, extract_features(c, query, self.corpus.post(c.post_id), self.now)) for c in fused]
        ranked = rank_l2(self.model, rows, k)
        by_id = {c.post_id: c for c in fused}
        results = []
        for pid, score in ranked:
            c = by_id[pid]
            results.append(SerpEntry(pid, score, c.from_keyword, c.from_ebr,
                                     self.corpus.post(pid).text[:SNIPPET_CHARS]))
        t4 = time.perf_counter_ns()
        timings = {
            "preprocess": (t1 - t0) // 1000,
            "keyword": blended.timings_us.get("keyword", 0),
            "ebr": blended.timings_us.get("ebr", 0),
            "fuse": (t3 - t2) // 1000,
            "rank": (t4 - t3) // 1000,
        }
        return SearchResult(group_id, query.text, k, results, timings, blended.degraded, blended.failures)


def _embedder_config(config: EngineConfig) -> EmbedderConfig:
    table = _read_json_map(config.paths.synonyms)
    return replace(config.embedder, synonym_table=table) if table is not None else config.embedder


def _stopwords(config: EngineConfig) -> frozenset[str]:
    if config.paths.stopwords:
        return load_stopwords(_require(config.paths.stopwords, "stopwords"))
    return DEFAULT_STOPWORDS
