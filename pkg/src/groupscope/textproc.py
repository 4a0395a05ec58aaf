"""Tokenization, normalization and query rewriting shared by both retrieval paths."""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import EmptyQuery

logger = logging.getLogger(__name__)

# Unicode general categories mapped to a space: punctuation, symbols, controls/format.
_SEPARATOR_CATEGORIES = ("P", "S", "C", "Z")


@dataclass(frozen=True)
class ProcessedText:
    original: str
    normalized: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ProcessedQuery:
    base: ProcessedText
    rewrites: tuple[ProcessedText, ...] = field(default_factory=tuple)

    @property
    def text(self) -> str:
        return self.base.normalized

    def terms(self) -> list[str]:
        """Unique terms over the base and every rewrite, sorted."""
        seen = set(self.base.tokens)
        for rw in self.rewrites:
            seen.update(rw.tokens)
        return sorted(seen)


@lru_cache(maxsize=4096)
def _map_char(ch: str) -> str:
    return " " if unicodedata.category(ch)[0] in _SEPARATOR_CATEGORIES else ch


def normalize(text: str) -> str:
    """NFC + lowercase, punctuation/symbols to spaces, whitespace collapsed."""
    s = unicodedata.normalize("NFC", text).lower()
    s = unicodedata.normalize("NFC", s)
    s = "".join(_map_char(ch) for ch in s)
    # lower() can expand to sequences that need recomposition
    return " ".join(unicodedata.normalize("NFC", s).split())


def tokenize(text: str) -> list[str]:
    return normalize(text).split()


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Load a one-term-per-line stopword file; the bundled list when ``path`` is None."""
    if path is None:
        raw = resources.files("groupscope.resources").joinpath("stopwords.txt").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    words = set()
    for line in raw.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.update(tokenize(line))
    return frozenset(words)


DEFAULT_STOPWORDS = load_stopwords()


def preprocess_query(raw: str, stopwords: frozenset[str] | None = None) -> ProcessedQuery:
    stops = DEFAULT_STOPWORDS if stopwords is None else stopwords
    normalized = normalize(raw)
    if not normalized:
        raise EmptyQuery(f"query {raw!r} is empty after normalization")
    tokens = tuple(normalized.split())
    base = ProcessedText(raw, normalized, tokens)
    stripped = tuple(t for t in tokens if t not in stops)
    rewrites: tuple[ProcessedText, ...] = ()
    if stripped and stripped != tokens:
        rewrites = (ProcessedText(raw, " ".join(stripped), stripped),)
    return ProcessedQuery(base, rewrites)
