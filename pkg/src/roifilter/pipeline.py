"""Run (image, question) pairs through extractor -> optional filter -> answerer.

The ``pretrained`` variant hands the raw detection batch to the answerer; the
``filtered`` variant applies :func:`roifilter.feature_filter.apply_filter`
first. Backends are anything with ``vocabulary``, ``extract_features``,
``answer`` and a ``serial`` flag; the package ships a hash-driven mock and a
backend that replays detection dumps. Real detector/VQA models plug in
through :func:`get_backend` with a ``module:factory`` name.
"""

from __future__ import annotations

import enum
import hashlib
import importlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .detection import ClassVocabulary, DetectionSet, derive_normalized_boxes
from .feature_filter import FilterConfig, FilterTrace, apply_filter
from .ingestion import Question, SampleManifestEntry, load_detection_dump

NO_RELEVANT_OBJECTS = "no relevant objects detected"


class Variant(str, enum.Enum):
    PRETRAINED = "pretrained"
    FILTERED = "filtered"


@dataclass(frozen=True)
class AnswerDistribution:
    labels: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.labels) != len(self.probs):
            raise ValueError(f"{len(self.labels)} labels but {len(self.probs)} probabilities")
        if any(not p >= 0 for p in self.probs):
            raise ValueError("probabilities must be non-negative")
        if self.probs and abs(sum(self.probs) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {sum(self.probs)}, expected 1")


def argmax_answer(dist: AnswerDistribution) -> str:
    """Most probable label; ties go to the lowest index."""
    if not dist.labels:
        raise ValueError("empty answer vocabulary")
    return dist.labels[int(np.argmax(np.asarray(dist.probs)))]


@dataclass(frozen=True)
class PipelineResult:
    sample_id: str
    question_id: str
    variant: Variant
    answer: str
    distribution: AnswerDistribution
    observed_features: frozenset[str]
    trace: FilterTrace | None = None

    def __post_init__(self):
        if (self.variant is Variant.FILTERED) != (self.trace is not None):
            raise ValueError("a trace is present exactly for the filtered variant")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "question_id": self.question_id,
            "variant": self.variant.value,
            "answer": self.answer,
            "observed_features": sorted(self.observed_features),
            "distribution": {"labels": list(self.distribution.labels), "probs": list(self.distribution.probs)},
            "trace": None if self.trace is None else self.trace.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineResult":
        return cls(
            sample_id=d["sample_id"],
            question_id=d["question_id"],
            variant=Variant(d["variant"]),
            answer=d["answer"],
            distribution=AnswerDistribution(d["distribution"]["labels"], d["distribution"]["probs"]),
            observed_features=frozenset(d["observed_features"]),
            trace=None if d["trace"] is None else FilterTrace.from_dict(d["trace"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class Backend(Protocol):
    """Feature extractor plus answer head.

    Both calls must be deterministic for a fixed construction seed. Backends
    that cannot take concurrent calls set ``serial = True``.
    """

    serial: bool

    @property
    def vocabulary(self) -> ClassVocabulary: ...

    def extract_features(self, image_ref: str) -> DetectionSet: ...

    def answer(self, dets: DetectionSet, question: Question) -> AnswerDistribution: ...


def run_pipeline(
    sample: SampleManifestEntry,
    question: Question,
    variant: Variant | str,
    backend: Backend,
    cfg: FilterConfig | None = None,
) -> PipelineResult:
    variant = Variant(variant)
    dets = backend.extract_features(sample.image_ref)
    vocab = backend.vocabulary
    trace = None
    if variant is Variant.FILTERED:
        if cfg is None:
            raise ValueError("the filtered variant needs a FilterConfig")
        dets, trace = apply_filter(dets, cfg, vocab)
        if len(dets) == 0:
            dist = AnswerDistribution((NO_RELEVANT_OBJECTS,), (1.0,))
            return PipelineResult(sample.sample_id, question.id, variant, NO_RELEVANT_OBJECTS, dist, frozenset(), trace)
    dist = backend.answer(dets, question)
    observed = frozenset(dets.labels(vocab))
    return PipelineResult(sample.sample_id, question.id, variant, argmax_answer(dist), dist, observed, trace)


# ------------------------------------------------------------- mock backend

MOCK_VOCABULARY = (
    "road", "lane line", "curb", "sidewalk", "crosswalk", "traffic sign", "traffic light",
    "car", "truck", "bus", "motorcycle", "bicycle", "person", "trailer", "construction barrier",
    "tree", "sky", "building", "tower", "pole", "vegetation", "cloud", "window", "fence",
    "grass", "billboard", "wall", "bird",
)

MOCK_ANSWERS = (
    "yes", "no", "0", "1", "2", "3", "4", "not enough information", "left", "right",
    "straight", "stop", "car", "truck", "person", "red", "green",
)

_STOPWORDS = frozenset(
    "a an the is are was were be there here in on of to i it any do does can should or from this that what how".split()
)


_YES_NO_LEADS = frozenset("is are was were do does did can could should will would".split())
YES_NO_ANSWERS = ("yes", "no", "not enough information")
COUNT_ANSWERS = ("0", "1", "2", "3", "4")


def answer_space(text: str, labels: Sequence[str]) -> list[bool]:
    """Mask of labels that fit the question type (yes/no, counting or open)."""
    tokens = re.findall(r"[a-z0-9]+", text.lower())
    if tokens[:2] == ["how", "many"]:
        allowed = set(COUNT_ANSWERS)
    elif tokens and tokens[0] in _YES_NO_LEADS and "or" not in tokens:
        allowed = set(YES_NO_ANSWERS)
    else:
        return [True] * len(labels)
    mask = [label in allowed for label in labels]
    return mask if any(mask) else [True] * len(labels)


def question_keywords(text: str) -> list[str]:
    """Sorted keyword bag of a question (stopwords removed, duplicates kept)."""
    return sorted(t for t in re.findall(r"[a-z0-9]+", text.lower()) if t not in _STOPWORDS)


def _derive_seed(*parts) -> int:
    blob = json.dumps(parts, sort_keys=True, ensure_ascii=True).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


class MockBackend:
    """Deterministic stand-in for a region detector and a VQA answer head.

    The extractor seeds a generator from ``(seed, image_ref)``; the answerer
    seeds one from ``(seed, consumed class multiset, question keyword bag)``,
    so any change to the consumed batch can change the answer. Answers that
    do not fit the question type get zero probability.
    """

    serial = False

    def __init__(
        self,
        seed: int = 0,
        feature_width: int = 2048,
        max_detections: int = 36,
        vocabulary: Sequence[str] = MOCK_VOCABULARY,
        answers: Sequence[str] = MOCK_ANSWERS,
        image_size: tuple[int, int] = (1600, 900),
    ):
        if not 1 <= max_detections <= 36:
            raise ValueError("max_detections must be in 1..36")
        self.seed = int(seed)
        self.feature_width = feature_width
        self.max_detections = max_detections
        self._vocab = ClassVocabulary(vocabulary)
        self.answers = tuple(answers)
        self.image_size = image_size

    @property
    def vocabulary(self) -> ClassVocabulary:
        return self._vocab

    def extract_features(self, image_ref: str) -> DetectionSet:
        rng = np.random.default_rng(_derive_seed("extract", self.seed, str(image_ref)))
        n = int(rng.integers(self.max_detections // 2, self.max_detections + 1))
        w, h = self.image_size
        class_ids = rng.integers(0, len(self._vocab), size=n)
        scores = rng.random(n).astype(np.float32)
        x = np.sort(rng.uniform(0, w, size=(n, 2)), axis=1)
        y = np.sort(rng.uniform(0, h, size=(n, 2)), axis=1)
        boxes = np.stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]], axis=1).astype(np.float32)
        feats = rng.standard_normal((n, self.feature_width), dtype=np.float32)
        return DetectionSet(class_ids, scores, boxes, derive_normalized_boxes(boxes, (w, h)), feats, (w, h))

    def answer(self, dets: DetectionSet, question: Question) -> AnswerDistribution:
        consumed = sorted(dets.labels(self._vocab))
        rng = np.random.default_rng(_derive_seed("answer", self.seed, consumed, question_keywords(question.text)))
        logits = 2.0 * rng.standard_normal(len(self.answers))
        logits[~np.array(answer_space(question.text, self.answers))] = -np.inf
        p = np.exp(logits - logits.max())
        p /= p.sum()
        return AnswerDistribution(self.answers, tuple(float(v) for v in p))


class DumpBackend(MockBackend):
    """Replays detection dumps named by ``image_ref``; answers like the mock.

    All dumps read through one instance must share a vocabulary.
    """

    serial = True

    def __init__(self, seed: int = 0, root: str | Path | None = None, answers: Sequence[str] = MOCK_ANSWERS):
        self.seed = int(seed)
        self.root = Path(root) if root is not None else None
        self.answers = tuple(answers)
        self._vocab = None

    @property
    def vocabulary(self) -> ClassVocabulary:
        if self._vocab is None:
            raise RuntimeError("vocabulary unknown until a dump has been read")
        return self._vocab

    def extract_features(self, image_ref: str) -> DetectionSet:
        path = Path(image_ref)
        if self.root is not None and not path.is_absolute():
            path = self.root / path
        dets, vocab = load_detection_dump(path)
        if self._vocab is None:
            self._vocab = vocab
        elif vocab != self._vocab:
            raise ValueError(f"{path}: vocabulary differs from earlier dumps")
        return dets


BACKENDS = {"mock": MockBackend, "dump": DumpBackend}


def mock_backend(seed: int, **kwargs) -> MockBackend:
    return MockBackend(seed, **kwargs)


def get_backend(name: str, seed: int = 0, **kwargs) -> Backend:
    """Instantiate a backend by registry name or ``package.module:factory``."""
    if name in BACKENDS:
        factory = BACKENDS[name]
    elif ":" in name:
        module, attr = name.split(":", 1)
        factory = getattr(importlib.import_module(module), attr)
    else:
        raise KeyError(f"unknown backend {name!r} (known: {', '.join(sorted(BACKENDS))})")
    return factory(seed=seed, **kwargs)
