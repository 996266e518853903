"""Subjective scoring of model answers against human judgement.

For every model answer an automatic score is computed as the clamped cosine
similarity between embeddings of the answer and of the human consensus
answer. The human score is the mean annotator rating of that answer, mapped
from the 1-5 scale onto [0, 1]. MAE, RMSE and Pearson correlation between the
two score vectors are reported per (embedding provider, pipeline variant).
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .ingestion import HumanAnswerRecord, Rating
from .pipeline import PipelineResult

# Model identifiers of the embedding stacks the scoring framework names.
PROVIDER_ROSTER = ("bert-base-uncased", "nli-distilbert-base", "all-mpnet-base-v2", "gpt2")


class ZeroVarianceError(ValueError):
    pass


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs; a text with none is its own single token."""
    tokens = _TOKEN.findall(text.lower())
    if not tokens:
        stripped = text.strip().lower()
        if not stripped:
            raise ValueError("cannot embed empty text")
        tokens = [stripped]
    return tokens


class HashingProvider:
    """Signed feature-hashing bag-of-words embedding.

    Each token ``t`` hashes to ``d = sha256((salt + "\\x00" + t).encode("utf-8"))``.
    It adds ``+1`` (or ``-1`` if ``d[4]`` is odd) at index
    ``int.from_bytes(d[:4], "little") % dim``; the sum is L2-normalized.
    Different salts give independent providers.
    """

    def __init__(self, name: str = "hashing", dim: int = 256, salt: str | None = None):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.name = name
        self.dim = dim
        self.salt = name if salt is None else salt

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            d = hashlib.sha256((self.salt + "\x00" + tok).encode("utf-8")).digest()
            vec[int.from_bytes(d[:4], "little") % self.dim] += -1.0 if d[4] & 1 else 1.0
        norm = np.linalg.norm(vec)
        if norm == 0:
            # Opposite-signed collisions cancelled out; fall back to the first token's slot.
            d = hashlib.sha256((self.salt + "\x00" + tokenize(text)[0]).encode("utf-8")).digest()
            vec[int.from_bytes(d[:4], "little") % self.dim] = 1.0
            norm = 1.0
        return vec / norm


class SentenceTransformerProvider:
    """Adapter for a locally available sentence-transformers model."""

    def __init__(self, model_name: str, model=None):
        if model is None:
            from sentence_transformers import SentenceTransformer

            model = SentenceTransformer(model_name)
        self.name = model_name
        self._model = model
        self.dim = int(model.get_sentence_embedding_dimension())

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.asarray(self._model.encode([text], normalize_embeddings=True)[0], dtype=np.float64)
        return vec / np.linalg.norm(vec)


class CachedProvider:
    """Memoizes ``embed``; lookups are lock-free, inserts take a lock."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.name = inner.name
        self.dim = inner.dim
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        vec = self.inner.embed(text)
        vec.setflags(write=False)
        with self._lock:
            return self._cache.setdefault(text, vec)


def get_provider(name: str) -> EmbeddingProvider:
    """``hashing`` or ``hashing:<salt>`` give mock providers; anything else
    is loaded as a sentence-transformers model."""
    if name == "hashing" or name.startswith("hashing:"):
        return CachedProvider(HashingProvider(name))
    return CachedProvider(SentenceTransformerProvider(name))


# ------------------------------------------------------------------ metrics


def _pair(xs, ys, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {x.size}")
    return x, y


def cosine_similarity(u, v) -> float:
    u, v = _pair(u, v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("zero-magnitude embedding")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def answer_similarity(model_answer: str, reference_answer: str, provider: EmbeddingProvider) -> float:
    """Cosine similarity of the two answers' embeddings, floored at 0."""
    if not model_answer.strip() or not reference_answer.strip():
        raise ValueError("answers must be non-empty")
    return max(0.0, cosine_similarity(provider.embed(model_answer), provider.embed(reference_answer)))


def mae(xs, ys) -> float:
    x, y = _pair(xs, ys)
    return float(np.mean(np.abs(x - y)))


def rmse(xs, ys) -> float:
    x, y = _pair(xs, ys)
    err = np.abs(x - y)
    worst = err.max()
    if worst == 0:
        return 0.0
    # Scaling by the largest error keeps tiny errors from underflowing when squared.
    return float(worst * np.sqrt(np.mean((err / worst) ** 2)))


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; raises ZeroVarianceError on constant input."""
    x, y = _pair(xs, ys, min_len=2)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ZeroVarianceError("zero variance")
    xc, yc = x - x.mean(), y - y.mean()
    r = np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    return float(np.clip(r, -1.0, 1.0))


# --------------------------------------------------------------- reporting


@dataclass(frozen=True)
class SimilarityRow:
    question_id: str
    variant: str
    provider: str
    auto_score: float
    human_score: float

    def __post_init__(self):
        for name in ("auto_score", "human_score"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} {getattr(self, name)} outside [0, 1]")


@dataclass(frozen=True)
class Aggregate:
    n: int
    mae: float
    rmse: float
    pearson: float | None  # None when undefined (n < 2 or a constant score vector)

    def to_dict(self) -> dict:
        return {"n": self.n, "mae": self.mae, "rmse": self.rmse, "pearson": self.pearson}


@dataclass(frozen=True)
class ScoreReport:
    rows: tuple[SimilarityRow, ...]
    aggregates: Mapping[tuple[str, str], Aggregate]

    def aggregates_json(self) -> dict:
        """``{"providers": {provider: {variant: {n, mae, rmse, pearson}}}}``."""
        out: dict = {}
        for (provider, variant), agg in sorted(self.aggregates.items()):
            out.setdefault(provider, {})[variant] = agg.to_dict()
        return {"metrics": ["mae", "rmse", "pearson"], "providers": out}


def aggregate_rows(rows: Iterable[SimilarityRow]) -> dict[tuple[str, str], Aggregate]:
    groups: dict[tuple[str, str], list[SimilarityRow]] = defaultdict(list)
    for row in rows:
        groups[(row.provider, row.variant)].append(row)
    out = {}
    for key in sorted(groups):
        auto = [r.auto_score for r in groups[key]]
        human = [r.human_score for r in groups[key]]
        try:
            r = pearson(auto, human)
        except ValueError:
            r = None
        out[key] = Aggregate(len(auto), mae(auto, human), rmse(auto, human), r)
    return out


class ScoringInputError(ValueError):
    pass


def human_scores(ratings: Iterable[Rating]) -> dict[tuple[str, str], float]:
    """Mean normalized rating per (question_id, variant)."""
    acc: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in ratings:
        acc[(r.question_id, r.variant)].append(r.normalized)
    return {k: math.fsum(v) / len(v) for k, v in acc.items()}


def evaluate_run(
    results: Sequence[PipelineResult],
    humans: Sequence[HumanAnswerRecord],
    providers: Sequence[EmbeddingProvider],
    ratings: Iterable[Rating],
) -> ScoreReport:
    consensus = {h.question_id: h.consensus_answer for h in humans}
    scores = human_scores(ratings)
    missing = []
    for res in results:
        if res.question_id not in consensus:
            missing.append(f"{res.question_id}: no consensus human answer")
        if (res.question_id, res.variant.value) not in scores:
            missing.append(f"{res.question_id}: no rating for variant {res.variant.value}")
    if missing:
        raise ScoringInputError("; ".join(missing))

    rows = [
        SimilarityRow(
            res.question_id,
            res.variant.value,
            p.name,
            answer_similarity(res.answer, consensus[res.question_id], p),
            scores[(res.question_id, res.variant.value)],
        )
        for res in results
        for p in providers
    ]
    rows.sort(key=lambda r: (r.provider, r.variant, r.question_id))
    return ScoreReport(tuple(rows), aggregate_rows(rows))
