"""Compare the objects humans and models attended to, and grade answers.

Grades follow the three-colour scheme used for answer tables: ``correct``
(green), ``partially_correct`` (yellow) and ``wrong`` (red).
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .detection import normalize_name
from .ingestion import normalize_answer

PARTIAL_F1 = 0.5


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    """|a & b| / |a | b|, with two empty sets counting as full agreement."""
    a, b = set(a), set(b)
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def _precision_recall(model: set[str], human: set[str]) -> tuple[float, float]:
    hit = len(model & human)
    precision = hit / len(model) if model else 1.0
    recall = hit / len(human) if human else 1.0
    return precision, recall


@dataclass(frozen=True)
class FeatureComparison:
    question_id: str
    human_features: frozenset[str]
    pretrained_features: frozenset[str]
    filtered_features: frozenset[str]
    jaccard_pretrained: float
    jaccard_filtered: float
    precision_pretrained: float
    recall_pretrained: float
    precision_filtered: float
    recall_filtered: float

    CSV_FIELDS = (
        "question_id", "jaccard_pretrained", "jaccard_filtered",
        "precision_pretrained", "recall_pretrained", "precision_filtered", "recall_filtered",
        "human_features", "pretrained_features", "filtered_features",
    )

    def csv_row(self) -> list:
        return [
            self.question_id,
            self.jaccard_pretrained, self.jaccard_filtered,
            self.precision_pretrained, self.recall_pretrained,
            self.precision_filtered, self.recall_filtered,
            ";".join(sorted(self.human_features)),
            ";".join(sorted(self.pretrained_features)),
            ";".join(sorted(self.filtered_features)),
        ]


def compare_features(
    question_id: str, human: Iterable[str], pretrained: Iterable[str], filtered: Iterable[str]
) -> FeatureComparison:
    h = frozenset(map(normalize_name, human))
    p = frozenset(map(normalize_name, pretrained))
    f = frozenset(map(normalize_name, filtered))
    pp, pr = _precision_recall(p, h)
    fp, fr = _precision_recall(f, h)
    return FeatureComparison(question_id, h, p, f, jaccard(p, h), jaccard(f, h), pp, pr, fp, fr)


class CorrectnessGrade(enum.IntEnum):
    WRONG = 0
    PARTIALLY_CORRECT = 1
    CORRECT = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def colour(self) -> str:
        return {0: "red", 1: "yellow", 2: "green"}[self.value]


class SynonymTable:
    """Maps every phrase in a synonym group to one canonical phrase.

    Rewriting scans tokens left to right and replaces the longest matching
    phrase, so ``traffic sign`` is not split by a ``sign`` entry.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()):
        parent: dict[str, str] = {}

        def find(x):
            parent.setdefault(x, x)
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in pairs:
            ra, rb = find(normalize_answer(a)), find(normalize_answer(b))
            if ra != rb:
                # Lexicographically smaller root keeps canonical forms stable.
                lo, hi = sorted((ra, rb))
                parent[hi] = lo
        self._canon = {term: find(term) for term in list(parent)}
        self._max_len = max((len(t.split()) for t in self._canon), default=0)

    def __len__(self) -> int:
        return len(self._canon)

    def canonical_tokens(self, text: str) -> list[str]:
        tokens = normalize_answer(text).split()
        out, i = [], 0
        while i < len(tokens):
            for size in range(min(self._max_len, len(tokens) - i), 0, -1):
                phrase = " ".join(tokens[i:i + size])
                if phrase in self._canon:
                    out.extend(self._canon[phrase].split())
                    i += size
                    break
            else:
                out.append(tokens[i])
                i += 1
        return out


def read_synonyms(path: str | Path | None = None) -> SynonymTable:
    """Parse ``term = term`` lines; ``#`` starts a comment."""
    if path is None:
        text = resources.files("roifilter").joinpath("data/synonyms.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        left, sep, right = line.partition("=")
        if not sep or not left.strip() or not right.strip():
            raise ValueError(f"{path or 'synonyms.txt'}:{lineno}: expected 'term = term'")
        pairs.append((left, right))
    return SynonymTable(pairs)


def token_f1(pred: list[str], gold: list[str]) -> float:
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(pred), common / len(gold)
    return 2 * precision * recall / (precision + recall)


def grade_answer(
    model_answer: str, consensus_answer: str, synonyms: SynonymTable | Mapping | None = None
) -> CorrectnessGrade:
    if synonyms is None:
        synonyms = SynonymTable()
    elif not isinstance(synonyms, SynonymTable):
        synonyms = SynonymTable(synonyms.items())
    if normalize_answer(model_answer) == normalize_answer(consensus_answer):
        return CorrectnessGrade.CORRECT
    pred, gold = synonyms.canonical_tokens(model_answer), synonyms.canonical_tokens(consensus_answer)
    if pred == gold:
        return CorrectnessGrade.CORRECT
    if pred and gold and token_f1(pred, gold) >= PARTIAL_F1:
        return CorrectnessGrade.PARTIALLY_CORRECT
    return CorrectnessGrade.WRONG
