"""Build verification test: replay a query set, judge the results, compute top-k relevance metrics.

Flow: :func:`replay_queries` runs every query M times and keeps round 0 as
the judged list; each (query, position) pair is rendered into a prompt and
judged R times; :func:`aggregate_rounds` folds the R labels into one; and
:func:`compute_metrics` turns the folded labels into an :class:`EvalReport`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .config import EvalConfig
from .corpus import QueryRecord
from .embedding import PhraseCanonicalizer
from .errors import EmptyRounds, GroupScopeError, MissingPlaceholder, ValidationError
from .textproc import DEFAULT_STOPWORDS, normalize

logger = logging.getLogger(__name__)

REPORT_FORMAT = "groupscope-bvt-report"
REPORT_VERSION = 1
PLACEHOLDERS = ("query", "post_text", "user")
_SLOT = re.compile(r"\{(query|post_text|user)\}")


class JudgeLabel(enum.Enum):
    RELEVANT = "Relevant"
    SOMEWHAT_RELEVANT = "SomewhatRelevant"
    IRRELEVANT = "Irrelevant"
    ERROR = "Error"
    SKIP = "Skip"


GRADED = (JudgeLabel.RELEVANT, JudgeLabel.SOMEWHAT_RELEVANT, JudgeLabel.IRRELEVANT)
_SCALE = {JudgeLabel.IRRELEVANT: 0, JudgeLabel.SOMEWHAT_RELEVANT: 1, JudgeLabel.RELEVANT: 2}


# -- prompts -------------------------------------------------------------------

def _resource(name: str) -> str:
    return resources.files("groupscope.resources").joinpath(name).read_text("utf-8")


def default_rubric() -> str:
    return _resource("somewhat_rubric.txt").strip()


@dataclass(frozen=True)
class PromptTemplate:
    """Template text with {query}, {post_text} and {user} slots.

    A ``{rubric}`` slot, if present, is expanded once at construction. The
    expanded text must contain the rubric verbatim.
    """

    text: str
    rubric: str = field(default_factory=default_rubric)

    def __post_init__(self):
        body = self.text.replace("{rubric}", self.rubric)
        if self.rubric not in body:
            raise ValidationError("prompt template does not contain the relevance rubric")
        object.__setattr__(self, "text", body)

    @classmethod
    def from_text(cls, raw: str, rubric: str | None = None) -> "PromptTemplate":
        lines = [ln for ln in raw.splitlines() if not ln.startswith("#")]
        text = "\n".join(lines).strip("\n") + "\n"
        return cls(text, rubric if rubric is not None else default_rubric())

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PromptTemplate":
        if path is None:
            return cls.from_text(_resource("relevance_prompt.txt"))
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"prompt template {p} does not exist")
        return cls.from_text(p.read_text(encoding="utf-8"))


def render_prompt(template: PromptTemplate, query_text: str, post_text: str, user: str) -> str:
    """Single-pass placeholder substitution; substituted values are never re-scanned."""
    for name in PLACEHOLDERS:
        if "{" + name + "}" not in template.text:
            raise MissingPlaceholder(name)
    values = {"query": query_text, "post_text": post_text, "user": user}
    return _SLOT.sub(lambda m: values[m.group(1)], template.text)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# -- judges --------------------------------------------------------------------

@dataclass(frozen=True)
class JudgeRequest:
    prompt: str
    query_text: str
    post_text: str
    query_id: str = ""
    post_id: str = ""
    position: int = 0
    round: int = 0


class Judge(Protocol):
    def __call__(self, request: JudgeRequest) -> JudgeLabel: ...


def judge_pair(judge: Judge, request: JudgeRequest) -> JudgeLabel:
    """Ask ``judge`` for one label; a judge that raises counts as Error."""
    try:
        label = judge(request)
    except Exception as exc:  # noqa: BLE001 - labels are the error channel
        logger.warning("judge raised on %s/%s: %s", request.query_id, request.post_id, exc)
        return JudgeLabel.ERROR
    return label if isinstance(label, JudgeLabel) else JudgeLabel.ERROR


def _cluster_token(cluster_id: str) -> str:
    return "_".join(normalize(cluster_id).split()) or "_"


class MockJudge:
    """Deterministic rule-based judge over canonicalized content tokens.

    Relevant: Jaccard overlap >= 0.5, or both sides mention the same synonym
    cluster. SomewhatRelevant: at least one shared content token or topic tag.
    Otherwise Irrelevant. Fault injection is keyed on the prompt hash, so a
    pair gets the same injected fault in every round and every run.
    """

    def __init__(self, synonym_table: Mapping[str, str] | None = None, topic_map: Mapping[str, str] | None = None,
                 stopwords: frozenset[str] | None = None, err_rate: float = 0.0, skip_rate: float = 0.0,
                 seed: int = 0):
        if not (0 <= err_rate and 0 <= skip_rate and err_rate + skip_rate <= 1):
            raise ValueError("fault rates must lie in [0, 1] and sum to at most 1")
        self._canon = PhraseCanonicalizer(dict(synonym_table or {}))
        self.clusters = frozenset(_cluster_token(c) for c in (synonym_table or {}).values())
        self.topics = {_cluster_token(k): v for k, v in (topic_map or {}).items()}
        self.stopwords = DEFAULT_STOPWORDS if stopwords is None else stopwords
        self.err_rate = err_rate
        self.skip_rate = skip_rate
        self.seed = seed
        self._lock = threading.Lock()
        self.injected: dict[JudgeLabel, set[tuple[str, int]]] = {JudgeLabel.ERROR: set(), JudgeLabel.SKIP: set()}
        self.calls = 0

    def content_tokens(self, text: str) -> set[str]:
        return {t for t in self._canon(normalize(text).split()) if t not in self.stopwords}

    def grade(self, query_text: str, post_text: str) -> JudgeLabel:
        q = self.content_tokens(query_text)
        p = self.content_tokens(post_text)
        shared = q & p
        if q and p and len(shared) / len(q | p) >= 0.5:
            return JudgeLabel.RELEVANT
        if shared & self.clusters:
            return JudgeLabel.RELEVANT
        if shared:
            return JudgeLabel.SOMEWHAT_RELEVANT
        qt = {self.topics[t] for t in q if t in self.topics}
        pt = {self.topics[t] for t in p if t in self.topics}
        return JudgeLabel.SOMEWHAT_RELEVANT if qt & pt else JudgeLabel.IRRELEVANT

    def _fault(self, prompt: str) -> JudgeLabel | None:
        if not (self.err_rate or self.skip_rate):
            return None
        digest = hashlib.sha256(f"{self.seed}:{prompt}".encode("utf-8")).digest()
        u = int.from_bytes(digest[:8], "big") / 2.0 ** 64
        if u < self.err_rate:
            return JudgeLabel.ERROR
        if u < self.err_rate + self.skip_rate:
            return JudgeLabel.SKIP
        return None

    def __call__(self, request: JudgeRequest) -> JudgeLabel:
        fault = self._fault(request.prompt)
        with self._lock:
            self.calls += 1
            if fault is not None:
                self.injected[fault].add((request.query_id, request.position))
        if fault is not None:
            return fault
        return self.grade(request.query_text, request.post_text)


_REMOTE_VOCAB = {"RELEVANT": JudgeLabel.RELEVANT, "SOMEWHAT_RELEVANT": JudgeLabel.SOMEWHAT_RELEVANT,
                 "IRRELEVANT": JudgeLabel.IRRELEVANT}


class RemoteJudge:
    """Judge backed by a model endpoint.

    Wire format: ``POST <endpoint>`` with ``{"prompt": ...}``; the answer is
    either a JSON object with an ``output`` field or a plain-text body. Only
    the three vocabulary words are accepted; anything else is Error.
    Transport failures and 5xx/429 answers are retried with exponential
    backoff, then reported as Skip.
    """

    def __init__(self, endpoint: str | None = None, token: str | None = None, retries: int = 2,
                 backoff: float = 0.25, timeout: float = 30.0, client=None, sleep=time.sleep):
        import httpx

        self.endpoint = endpoint or os.environ.get("JUDGE_ENDPOINT")
        if not self.endpoint:
            raise ValidationError("remote judge needs an endpoint (JUDGE_ENDPOINT)")
        token = token if token is not None else os.environ.get("JUDGE_TOKEN")
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = client or httpx.Client(timeout=timeout)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep

    @staticmethod
    def parse(resp) -> JudgeLabel:
        text = resp.text
        try:
            body = resp.json()
        except ValueError:
            body = None
        if isinstance(body, dict):
            text = body.get("output", body.get("label"))
        elif isinstance(body, str):
            text = body
        if not isinstance(text, str):
            return JudgeLabel.ERROR
        return _REMOTE_VOCAB.get(text.strip().upper(), JudgeLabel.ERROR)

    def __call__(self, request: JudgeRequest) -> JudgeLabel:
        import httpx

        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json={"prompt": request.prompt},
                                         headers=self._headers, timeout=self.timeout)
            except httpx.TransportError as exc:
                logger.info("judge transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                continue
            if resp.status_code != 200:
                return JudgeLabel.ERROR
            return self.parse(resp)
        return JudgeLabel.SKIP


# -- aggregation and metrics ---------------------------------------------------

def aggregate_rounds(labels: Sequence[JudgeLabel]) -> JudgeLabel:
    """Fold R round labels into one.

    Error/Skip rounds are dropped. With nothing left the result is Skip if
    any round skipped, else Error. Otherwise a strict majority wins; failing
    that, the median on Irrelevant < SomewhatRelevant < Relevant, taking the
    lower middle element when an even number of rounds survive.
    """
    if not labels:
        raise EmptyRounds("need at least one round")
    valid = sorted((l for l in labels if l in _SCALE), key=_SCALE.__getitem__)
    if not valid:
        return JudgeLabel.SKIP if JudgeLabel.SKIP in labels else JudgeLabel.ERROR
    label, count = max(Counter(valid).items(), key=lambda kv: (kv[1], _SCALE[kv[0]]))
    if count * 2 > len(valid):
        return label
    return valid[(len(valid) - 1) // 2]


@dataclass(frozen=True)
class KMetrics:
    attempts: int
    relevant: int
    somewhat: int
    irrelevant: int
    errors: int
    skips: int

    @property
    def valid(self) -> int:
        return self.attempts - self.errors - self.skips

    @property
    def defined(self) -> bool:
        return self.valid > 0

    @property
    def rel_rate(self) -> float | None:
        return self.relevant / self.valid if self.valid else None

    @property
    def somewhat_rel_rate(self) -> float | None:
        return (self.relevant + self.somewhat) / self.valid if self.valid else None

    @property
    def err_rate(self) -> float | None:
        return self.errors / self.attempts if self.attempts else None

    @property
    def skip_rate(self) -> float | None:
        return self.skips / self.attempts if self.attempts else None

    def __add__(self, other: "KMetrics") -> "KMetrics":
        return KMetrics(self.attempts + other.attempts, self.relevant + other.relevant,
                        self.somewhat + other.somewhat, self.irrelevant + other.irrelevant,
                        self.errors + other.errors, self.skips + other.skips)

    @classmethod
    def empty(cls) -> "KMetrics":
        return cls(0, 0, 0, 0, 0, 0)

    @classmethod
    def from_labels(cls, labels: Iterable[JudgeLabel]) -> "KMetrics":
        c = Counter(labels)
        return cls(sum(c.values()), c[JudgeLabel.RELEVANT], c[JudgeLabel.SOMEWHAT_RELEVANT],
                   c[JudgeLabel.IRRELEVANT], c[JudgeLabel.ERROR], c[JudgeLabel.SKIP])

    def counts(self) -> dict:
        return {"attempts": self.attempts, "valid": self.valid, "relevant": self.relevant,
                "somewhat_relevant": self.somewhat, "irrelevant": self.irrelevant,
                "errors": self.errors, "skips": self.skips}

    def rates(self) -> dict:
        return {"rel rate": self.rel_rate, "somewhat rel rate": self.somewhat_rel_rate,
                "err rate": self.err_rate, "skip rate": self.skip_rate}


RATE_NAMES = ("rel rate", "somewhat rel rate", "err rate", "skip rate")


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    totals: dict[int, KMetrics]
    per_query: dict[str, dict[int, KMetrics]]
    failures: dict[str, str] = field(default_factory=dict)
    unstable: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def rows(self) -> dict[str, float | None]:
        """Flat metric rows such as ``top5 rel rate``; None where the rate is undefined."""
        out = {}
        for k in self.ks:
            for name, value in self.totals[k].rates().items():
                out[f"top{k} {name}"] = value
        return out

    def undefined(self) -> list[str]:
        return [name for name, v in self.rows().items() if v is None]

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "ks": list(self.ks),
            "rows": self.rows(),
            "undefined": self.undefined(),
            "counts": {f"top{k}": self.totals[k].counts() for k in self.ks},
            "per_query": {qid: {f"top{k}": {**m[k].counts(), **m[k].rates()} for k in self.ks}
                          for qid, m in sorted(self.per_query.items())},
            "failures": dict(sorted(self.failures.items())),
            "unstable": sorted(self.unstable),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("format") != REPORT_FORMAT:
            raise ValidationError("not an evaluation report")
        ks = tuple(d["ks"])

        def km(c: dict) -> KMetrics:
            return KMetrics(c["attempts"], c["relevant"], c["somewhat_relevant"], c["irrelevant"],
                            c["errors"], c["skips"])

        totals = {k: km(d["counts"][f"top{k}"]) for k in ks}
        per_query = {qid: {k: km(m[f"top{k}"]) for k in ks} for qid, m in d.get("per_query", {}).items()}
        return cls(ks, totals, per_query, dict(d.get("failures", {})), list(d.get("unstable", [])),
                   dict(d.get("meta", {})))

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"report {p} does not exist")
        try:
            return cls.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"report {p} is malformed: {exc}") from None


def compute_metrics(judgments: Mapping[tuple[str, int], JudgeLabel], ks: Iterable[int] = (5, 10),
                    query_ids: Iterable[str] | None = None) -> EvalReport:
    """Per-k counts and rates over every judged (query_id, position) pair with position <= k.

    Positions are 1-based. ``query_ids`` lists queries to include even when
    they returned nothing (they then contribute zero attempts).
    """
    ks = tuple(sorted(set(ks)))
    by_query: dict[str, list[tuple[int, JudgeLabel]]] = {q: [] for q in (query_ids or ())}
    for (qid, pos), label in judgments.items():
        if pos < 1:
            raise ValueError("positions are 1-based")
        by_query.setdefault(qid, []).append((pos, label))
    per_query = {qid: {k: KMetrics.from_labels(l for p, l in pairs if p <= k) for k in ks}
                 for qid, pairs in by_query.items()}
    totals = {k: sum((m[k] for m in per_query.values()), KMetrics.empty()) for k in ks}
    return EvalReport(ks, totals, per_query)


def render_table(report: EvalReport) -> str:
    rows = report.rows()
    width = max(len(n) for n in rows) if rows else 10
    lines = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
    for name, v in rows.items():
        lines.append(f"{name:<{width}}  {'undefined' if v is None else f'{v:.4f}'}")
    for k in report.ks:
        c = report.totals[k]
        lines.append(f"top{k} judged pairs: {c.attempts} (valid {c.valid}, errors {c.errors}, skips {c.skips})")
    if report.unstable:
        lines.append(f"unstable queries: {', '.join(sorted(report.unstable))}")
    if report.failures:
        lines.append(f"failed queries: {', '.join(sorted(report.failures))}")
    return "\n".join(lines) + "\n"


# -- replay and the full run ---------------------------------------------------

@dataclass(frozen=True)
class SerpSnapshot:
    query_id: str
    group_id: str
    replay_round: int
    ranked: tuple[tuple[str, float], ...]
    stable: bool = True

    def post_ids(self) -> list[str]:
        return [pid for pid, _ in self.ranked]


@dataclass
class ReplayOutcome:
    snapshots: dict[str, list[SerpSnapshot]]
    failures: dict[str, str]

    def judged(self) -> dict[str, SerpSnapshot]:
        return {qid: snaps[0] for qid, snaps in self.snapshots.items()}

    def unstable(self) -> list[str]:
        return [qid for qid, snaps in self.snapshots.items() if not snaps[0].stable]


def replay_queries(engine, query_set: Sequence[QueryRecord], k: int, rounds: int = 3) -> ReplayOutcome:
    """Run each query ``rounds`` times; per-query failures are recorded, never fatal."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    snapshots: dict[str, list[SerpSnapshot]] = {}
    failures: dict[str, str] = {}
    for q in query_set:
        try:
            lists = []
            for _ in range(rounds):
                res = engine.search(q.group_id, q.query_text, k)
                lists.append(tuple((r.post_id, r.score) for r in res.results))
        except GroupScopeError as exc:
            failures[q.query_id] = f"{type(exc).__name__}: {exc}"
            continue
        stable = all(lst == lists[0] for lst in lists)
        if not stable:
            logger.warning("query %s returned different lists across replays", q.query_id)
        snapshots[q.query_id] = [SerpSnapshot(q.query_id, q.group_id, r, lst, stable)
                                 for r, lst in enumerate(lists)]
    return ReplayOutcome(snapshots, failures)


def run_bvt(engine, query_set: Sequence[QueryRecord], judge: Judge, config: EvalConfig | None = None,
            template: PromptTemplate | None = None, report_path: str | Path | None = None,
            audit_path: str | Path | None = None) -> EvalReport:
    config = config or EvalConfig()
    template = template or PromptTemplate.load()
    ids = [q.query_id for q in query_set]
    if len(set(ids)) != len(ids):
        raise ValidationError("query ids must be unique")
    depth = max(config.ks)
    replay = replay_queries(engine, query_set, depth, config.replays)
    records = {q.query_id: q for q in query_set}

    tasks: list[tuple[JudgeRequest, str]] = []
    for q in query_set:
        snap = replay.judged().get(q.query_id)
        if snap is None:
            continue
        for pos, pid in enumerate(snap.post_ids(), start=1):
            post = engine.corpus.post(pid)
            prompt = render_prompt(template, q.query_text, post.text, records[q.query_id].user_id)
            h = prompt_hash(prompt)
            for r in range(config.rounds):
                tasks.append((JudgeRequest(prompt, q.query_text, post.text, q.query_id, pid, pos, r), h))

    with ThreadPoolExecutor(max_workers=config.concurrency, thread_name_prefix="judge") as pool:
        labels = list(pool.map(lambda t: judge_pair(judge, t[0]), tasks))

    rounds: dict[tuple[str, int], list[JudgeLabel]] = {}
    audit = []
    for (req, h), label in zip(tasks, labels):
        rounds.setdefault((req.query_id, req.position), []).append(label)
        audit.append({"query_id": req.query_id, "post_id": req.post_id, "position": req.position,
                      "round": req.round, "label": label.value, "prompt_sha256": h})
    judgments = {key: aggregate_rounds(ls) for key, ls in rounds.items()}
    report = compute_metrics(judgments, config.ks, [qid for qid in ids if qid not in replay.failures])
    report.failures = dict(replay.failures)
    report.unstable = replay.unstable()
    report.meta = {"judge": type(judge).__name__, "rounds": config.rounds, "replays": config.replays,
                   "retrieval": getattr(engine, "retrieval", None), "queries": len(query_set)}

    if report_path is not None:
        Path(report_path).write_text(report.to_json(), encoding="utf-8")
    if audit_path is not None:
        with open(audit_path, "w", encoding="utf-8") as fh:
            for line in audit:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
    return report
