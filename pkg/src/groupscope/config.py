"""Engine configuration: one JSON file, every section optional, command-line flags override."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .blend import FusionConfig
from .embedding import EmbedderConfig
from .errors import ValidationError
from .lexical import Bm25Params
from .vector_index import AnnParams

RETRIEVAL_MODES = ("blended", "keyword", "ebr")


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (5, 10)
    rounds: int = 3
    replays: int = 3
    concurrency: int = 4
    judge: str = "mock"
    err_rate: float = 0.0
    skip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        ks = tuple(sorted({int(k) for k in self.ks}))
        if not ks or ks[0] < 1:
            raise ValueError("eval ks must be positive")
        object.__setattr__(self, "ks", ks)
        if self.rounds < 1 or self.replays < 1 or self.concurrency < 1:
            raise ValueError("rounds, replays and concurrency must be >= 1")
        if self.judge not in ("mock", "remote"):
            raise ValueError(f"unknown judge {self.judge!r}")
        if not (0 <= self.err_rate <= 1 and 0 <= self.skip_rate <= 1 and self.err_rate + self.skip_rate <= 1):
            raise ValueError("fault rates must lie in [0, 1] and sum to at most 1")


@dataclass(frozen=True)
class Paths:
    corpus: str | None = None
    lexical_index: str | None = None
    vector_index: str | None = None
    model: str | None = None
    stopwords: str | None = None
    prompt_template: str | None = None
    synonyms: str | None = None
    topics: str | None = None
    queries: str | None = None


@dataclass(frozen=True)
class EngineConfig:
    paths: Paths = field(default_factory=Paths)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    ann: AnnParams = field(default_factory=AnnParams)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    task_weights: tuple[float, float, float] = (0.6, 0.2, 0.2)
    eval: EvalConfig = field(default_factory=EvalConfig)
    retrieval: str = "blended"
    now: int | None = None

    def __post_init__(self):
        if self.retrieval not in RETRIEVAL_MODES:
            raise ValueError(f"retrieval must be one of {RETRIEVAL_MODES}")
        tw = self.task_weights
        if len(tw) != 3 or min(tw) < 0 or abs(sum(tw) - 1.0) > 1e-9:
            raise ValueError("task_weights must be three non-negative numbers summing to 1")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "EngineConfig":
        try:
            paths = dict(d.get("paths", {}))
            if base_dir is not None:
                paths = {k: (str(Path(base_dir) / v) if v and not Path(v).is_absolute() else v)
                         for k, v in paths.items()}
            emb = dict(d.get("embedder", {}))
            return cls(
                paths=Paths(**paths),
                bm25=Bm25Params(**d.get("bm25", {})),
                ann=AnnParams(**d.get("ann", {})),
                embedder=EmbedderConfig.from_dict(emb),
                fusion=FusionConfig(**d.get("fusion", {})),
                task_weights=tuple(d.get("task_weights", (0.6, 0.2, 0.2))),
                eval=EvalConfig(**{k: tuple(v) if k == "ks" else v for k, v in d.get("eval", {}).items()}),
                retrieval=d.get("retrieval", "blended"),
                now=d.get("now"),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"invalid engine configuration: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file {p} does not exist")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {p} is not valid JSON: {exc}") from None
        return cls.from_dict(d, base_dir=p.parent)

    def to_dict(self) -> dict:
        return {
            "paths": asdict(self.paths),
            "bm25": asdict(self.bm25),
            "ann": asdict(self.ann),
            "embedder": self.embedder.to_dict(),
            "fusion": asdict(self.fusion),
            "task_weights": list(self.task_weights),
            "eval": {**asdict(self.eval), "ks": list(self.eval.ks)},
            "retrieval": self.retrieval,
            "now": self.now,
        }

    def with_paths(self, **overrides) -> "EngineConfig":
        known = {f.name for f in fields(Paths)}
        vals = {k: v for k, v in overrides.items() if k in known and v is not None}
        return replace(self, paths=replace(self.paths, **vals)) if vals else self
