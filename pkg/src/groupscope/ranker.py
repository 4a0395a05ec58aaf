"""Second-stage multi-task ranker: per-objective logistic sub-models blended by task weights."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .blend import Candidate
from .corpus import Post
from .errors import DimensionMismatch, EmptyTrainingSet, FormatError, VersionMismatch
from .textproc import ProcessedQuery, tokenize

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("bm25_norm", "cos_norm", "tfidf", "l1_score", "from_keyword", "from_ebr",
                 "query_term_overlap", "log_doc_len", "recency", "bias")
N_FEATURES = len(FEATURE_NAMES)
TASKS = ("click", "share", "comment")
BIAS = FEATURE_NAMES.index("bias")
MODEL_FORMAT = "groupscope-mtml"
MODEL_VERSION = 1
SCHEMA_HASH = hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()[:16]


def extract_features(candidate: Candidate, query: ProcessedQuery, post: Post, now: int) -> np.ndarray:
    qterms = set(query.terms())
    doc_tokens = tokenize(post.text)
    overlap = len(qterms & set(doc_tokens)) / len(qterms) if qterms else 0.0
    age_days = max(0, now - post.created_at) / 86400.0
    return np.array([
        candidate.bm25_norm,
        candidate.cos_norm,
        candidate.tfidf,
        candidate.l1_score,
        1.0 if candidate.from_keyword else 0.0,
        1.0 if candidate.from_ebr else 0.0,
        overlap,
        math.log1p(len(doc_tokens)),
        1.0 / (1.0 + age_days),
        1.0,
    ])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MtmlModel:
    weights: np.ndarray  # (len(TASKS), N_FEATURES)
    task_weights: tuple[float, float, float] = (0.6, 0.2, 0.2)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(TASKS), N_FEATURES):
            raise DimensionMismatch(N_FEATURES, self.weights.shape[-1])
        tw = tuple(float(x) for x in self.task_weights)
        if len(tw) != len(TASKS) or min(tw) < 0 or not math.isclose(sum(tw), 1.0, abs_tol=1e-9):
            raise ValueError("task_weights must be three non-negative values summing to 1")
        self.task_weights = tw

    @classmethod
    def zeros(cls, task_weights=(0.6, 0.2, 0.2)) -> "MtmlModel":
        return cls(np.zeros((len(TASKS), N_FEATURES)), task_weights)

    @classmethod
    def prior(cls, task_weights=(0.6, 0.2, 0.2)) -> "MtmlModel":
        """Hand-set weights used when no trained model is configured: follow L1 fusion, reward overlap and recency."""
        w = np.zeros((len(TASKS), N_FEATURES))
        idx = FEATURE_NAMES.index
        w[0, [idx("l1_score"), idx("query_term_overlap"), idx("recency"), BIAS]] = [4.0, 1.0, 0.5, -3.0]
        w[1, [idx("l1_score"), idx("cos_norm"), idx("recency"), BIAS]] = [3.0, 1.0, 1.0, -3.0]
        w[2, [idx("l1_score"), idx("query_term_overlap"), idx("recency"), BIAS]] = [3.0, 1.0, 0.5, -3.0]
        return cls(w, task_weights)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MtmlModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.task_weights == other.task_weights


def predict_batch(model: MtmlModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-task probabilities (n, 3) and blended final scores (n,)."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != N_FEATURES:
        raise DimensionMismatch(N_FEATURES, X.shape[1])
    P = sigmoid(X @ model.weights.T)
    return P, P @ np.asarray(model.task_weights)


def predict(model: MtmlModel, features: np.ndarray) -> tuple[float, float, float, float]:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != N_FEATURES:
        raise DimensionMismatch(N_FEATURES, f.shape[-1])
    P, final = predict_batch(model, f[None, :])
    return float(P[0, 0]), float(P[0, 1]), float(P[0, 2]), float(final[0])


def rank_l2(model: MtmlModel, rows: Sequence[tuple[str, np.ndarray]], n: int) -> list[tuple[str, float]]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not rows:
        return []
    _, final = predict_batch(model, np.vstack([f for _, f in rows]))
    scored = sorted(zip((pid for pid, _ in rows), final.tolist()), key=lambda t: (-t[1], t[0]))
    return scored[:n]


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainingExample:
    features: np.ndarray
    labels: tuple[int, int, int]


def _l2_mask() -> np.ndarray:
    m = np.ones(N_FEATURES)
    m[BIAS] = 0.0
    return m


def logistic_loss(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = X @ w
    # log(1 + e^z) computed stably
    nll = np.logaddexp(0.0, z) - y * z
    mask = _l2_mask() if w.shape[0] == N_FEATURES else np.ones_like(w)
    return float(nll.mean() + 0.5 * l2 * np.sum(mask * w * w))


def logistic_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    mask = _l2_mask() if w.shape[0] == N_FEATURES else np.ones_like(w)
    return X.T @ (sigmoid(X @ w) - y) / X.shape[0] + l2 * mask * w


def train(examples: Sequence[TrainingExample], lr: float = 0.1, epochs: int = 30, l2: float = 1e-4,
          seed: int = 0, batch_size: int = 32, task_weights=(0.6, 0.2, 0.2)) -> MtmlModel:
    """Fit each task independently with seeded mini-batch SGD on L2-regularized logistic loss."""
    if not examples:
        raise EmptyTrainingSet("no training examples")
    X = np.vstack([np.asarray(e.features, dtype=np.float64) for e in examples])
    if X.shape[1] != N_FEATURES:
        raise DimensionMismatch(N_FEATURES, X.shape[1])
    Y = np.array([e.labels for e in examples], dtype=np.float64)
    W = np.zeros((len(TASKS), N_FEATURES))
    notes = []
    for t, task in enumerate(TASKS):
        y = Y[:, t]
        if y.min() == y.max():
            msg = f"task {task!r} has a single label class; weights left at zero"
            logger.warning(msg)
            notes.append(msg)
            continue
        rng = np.random.default_rng([seed, t])
        w = np.zeros(N_FEATURES)
        for _ in range(epochs):
            order = rng.permutation(len(y))
            for start in range(0, len(y), batch_size):
                b = order[start:start + batch_size]
                w -= lr * logistic_grad(w, X[b], y[b], l2)
        W[t] = w
    model = MtmlModel(W, task_weights)
    model.warnings.extend(notes)
    return model


def load_training_examples(path: str | Path) -> list[TrainingExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats = np.asarray(rec["features"], dtype=np.float64)
                labels = tuple(int(v) for v in rec["labels"])
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{line_no}: bad training record ({exc})") from None
            if feats.shape != (N_FEATURES,):
                raise DimensionMismatch(N_FEATURES, feats.shape[-1] if feats.ndim else 0)
            if len(labels) != len(TASKS) or any(v not in (0, 1) for v in labels):
                raise FormatError(f"{path}:{line_no}: labels must be three 0/1 values")
            out.append(TrainingExample(feats, labels))
    return out


def dump_training_examples(examples: Iterable[TrainingExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(json.dumps({"features": [float(x) for x in e.features],
                                 "labels": list(e.labels)}) + "\n")


# -- persistence ----------------------------------------------------------------

def save_model(model: MtmlModel, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "features": list(FEATURE_NAMES),
        "schema_hash": SCHEMA_HASH,
        "tasks": list(TASKS),
        "task_weights": list(model.task_weights),
        "weights": [[float(x) for x in row] for row in model.weights],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> MtmlModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a ranker model file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(MODEL_VERSION, doc.get("version"))
    feats = doc.get("features", [])
    if len(feats) != N_FEATURES:
        raise DimensionMismatch(N_FEATURES, len(feats))
    if doc.get("schema_hash") != SCHEMA_HASH or tuple(feats) != FEATURE_NAMES:
        raise FormatError(f"{path}: feature schema does not match this build")
    weights = np.asarray(doc["weights"], dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != N_FEATURES:
        raise DimensionMismatch(N_FEATURES, weights.shape[-1])
    return MtmlModel(weights, tuple(doc["task_weights"]))
