"""Two-tower embedding interface and a deterministic hashed character n-gram embedder.

The reference embedder stands in for a learned semantic model. Both towers
share one featurization: the normalized text is tokenized, phrases listed in
the synonym table are collapsed into their cluster token, and every token's
boundary-padded character n-grams are hashed into a signed count vector that
is finally scaled to unit length.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .errors import BadResponse, DimensionMismatch, EmbedTimeout, EmptyText
from .textproc import ProcessedQuery, normalize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedderConfig:
    dim: int = 64
    ngram_size: int = 3
    seed: int = 0
    synonym_table: dict[str, str] | None = field(default=None, hash=False)

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError("dim must be >= 8")
        if self.ngram_size < 2:
            raise ValueError("ngram_size must be >= 2")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "ngram_size": self.ngram_size, "seed": self.seed,
                "synonym_table": dict(sorted(self.synonym_table.items())) if self.synonym_table else None}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        return cls(dim=int(d.get("dim", 64)), ngram_size=int(d.get("ngram_size", 3)),
                   seed=int(d.get("seed", 0)), synonym_table=d.get("synonym_table") or None)


class Embedder(Protocol):
    dim: int

    def embed_query(self, query: ProcessedQuery) -> np.ndarray: ...

    def embed_doc(self, text: str) -> np.ndarray: ...

    def embed_docs(self, texts: Sequence[str]) -> np.ndarray: ...


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors."""
    if a.shape != b.shape:
        raise DimensionMismatch(a.shape[-1], b.shape[-1])
    return float(np.dot(a, b))


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


class PhraseCanonicalizer:
    def __init__(self, table: dict[str, str] | None):
        self.phrases: dict[tuple[str, ...], str] = {}
        for phrase, cluster in (table or {}).items():
            toks = tuple(normalize(phrase).split())
            if toks:
                self.phrases[toks] = "_".join(normalize(cluster).split()) or "_"
        self.max_len = max((len(p) for p in self.phrases), default=0)

    def __call__(self, tokens: Sequence[str]) -> list[str]:
        if not self.phrases:
            return list(tokens)
        out, i = [], 0
        while i < len(tokens):
            for n in range(min(self.max_len, len(tokens) - i), 0, -1):
                hit = self.phrases.get(tuple(tokens[i:i + n]))
                if hit is not None:
                    out.append(hit)
                    i += n
                    break
            else:
                out.append(tokens[i])
                i += 1
        return out


class HashingEmbedder:
    """Reference two-tower embedder; query and document towers share featurization."""

    def __init__(self, config: EmbedderConfig | None = None):
        self.config = config or EmbedderConfig()
        self.dim = self.config.dim
        self._canon = PhraseCanonicalizer(self.config.synonym_table)
        key = self.config.seed.to_bytes(8, "little", signed=True)

        @lru_cache(maxsize=1 << 16)
        def slot(gram: str) -> tuple[int, float]:
            h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest(), "little")
            return (h >> 1) % self.dim, (1.0 if h & 1 else -1.0)

        self._slot = slot

    def canonical_tokens(self, text: str) -> list[str]:
        return self._canon(normalize(text).split())

    def _featurize(self, text: str) -> np.ndarray:
        tokens = self.canonical_tokens(text)
        if not tokens:
            raise EmptyText(f"text {text!r} is empty after normalization")
        n = self.config.ngram_size
        v = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            padded = f"#{tok}#"
            grams = [padded] if len(padded) <= n else [padded[i:i + n] for i in range(len(padded) - n + 1)]
            for g in grams:
                idx, sign = self._slot(g)
                v[idx] += sign
        if not v.any():
            # signed collisions cancelled out entirely; fall back to a fixed axis
            v[self._slot(" ".join(tokens))[0]] = 1.0
        return _unit(v)

    def embed_doc(self, text: str) -> np.ndarray:
        return self._featurize(text)

    def embed_query(self, query: ProcessedQuery) -> np.ndarray:
        return self._featurize(query.base.normalized)

    def embed_docs(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self._featurize(t) for t in texts])


def embed_doc(config: EmbedderConfig, text: str) -> np.ndarray:
    return HashingEmbedder(config).embed_doc(text)


def embed_query(config: EmbedderConfig, query: ProcessedQuery) -> np.ndarray:
    return HashingEmbedder(config).embed_query(query)


@dataclass
class RemoteEmbedderConfig:
    endpoint: str | None = None
    token: str | None = None
    dim: int = 64
    timeout: float = 5.0
    batch_size: int = 64
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, **overrides) -> "RemoteEmbedderConfig":
        cfg = cls(endpoint=os.environ.get("EMBED_ENDPOINT"), token=os.environ.get("EMBED_TOKEN"))
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        return cfg


class RemoteEmbedder:
    """Client for an out-of-process embedding service.

    Wire format: ``POST <endpoint>`` with ``{"tower": "query"|"doc", "texts": [...]}``;
    the service answers ``{"vectors": [[...], ...]}`` in input order.
    """

    def __init__(self, config: RemoteEmbedderConfig, client=None):
        import httpx

        if not config.endpoint:
            raise ValueError("remote embedder needs an endpoint (EMBED_ENDPOINT)")
        self.config = config
        self.dim = config.dim
        headers = {"Authorization": f"Bearer {config.token}"} if config.token else {}
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)
        self._headers = headers

    def _post(self, texts: Sequence[str], tower: str) -> np.ndarray:
        import httpx

        try:
            resp = self._client.post(self.config.endpoint, json={"tower": tower, "texts": list(texts)},
                                     headers=self._headers, timeout=self.config.timeout)
        except httpx.TimeoutException as exc:
            raise EmbedTimeout(str(exc)) from exc
        if resp.status_code != 200:
            raise BadResponse(resp.status_code)
        try:
            vectors = resp.json()["vectors"]
            arr = np.asarray(vectors, dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise BadResponse(resp.status_code, f"unparsable body: {exc}") from exc
        if arr.ndim != 2 or arr.shape[0] != len(texts):
            raise BadResponse(resp.status_code, f"expected {len(texts)} vectors")
        if arr.shape[1] != self.dim:
            raise DimensionMismatch(self.dim, arr.shape[1])
        norms = np.linalg.norm(arr, axis=1)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise BadResponse(resp.status_code, "zero or non-finite vector")
        return arr / norms[:, None]

    def embed_batch(self, texts: Sequence[str], tower: str = "doc") -> np.ndarray:
        if tower not in ("query", "doc"):
            raise ValueError(f"unknown tower {tower!r}")
        if not texts:
            raise ValueError("batch must be non-empty")
        size = self.config.batch_size
        chunks = [texts[i:i + size] for i in range(0, len(texts), size)]
        if len(chunks) == 1:
            return self._post(chunks[0], tower)
        with ThreadPoolExecutor(max_workers=max(1, self.config.max_in_flight)) as pool:
            parts = list(pool.map(lambda c: self._post(c, tower), chunks))
        return np.vstack(parts)

    def embed_doc(self, text: str) -> np.ndarray:
        return self.embed_batch([text], "doc")[0]

    def embed_docs(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return self.embed_batch(list(texts), "doc")

    def embed_query(self, query: ProcessedQuery) -> np.ndarray:
        return self.embed_batch([query.base.normalized], "query")[0]


def remote_embed(config: RemoteEmbedderConfig, texts: Sequence[str], tower: str, client=None) -> np.ndarray:
    return RemoteEmbedder(config, client=client).embed_batch(texts, tower)
