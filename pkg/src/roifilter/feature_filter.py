"""Class-whitelist feature filter.

Keeps the detections whose class is on a whitelist of driving-relevant
classes and whose confidence reaches the detection threshold, and drops the
rest. Every column of the batch is selected with the same index set so the
surviving rows stay aligned, and the original indices are returned so that a
downstream encoder can map filtered rows back to the unfiltered batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .detection import ClassVocabulary, DetectionSet, normalize_name, validate_detection_set

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


class FilterConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    whitelist: frozenset[str]
    detection_threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "whitelist", frozenset(self.whitelist))
        t = float(self.detection_threshold)
        if not 0.0 <= t <= 1.0:
            raise FilterConfigError(f"detection threshold {t} outside [0, 1]")
        object.__setattr__(self, "detection_threshold", t)

    @classmethod
    def identity(cls, vocab: ClassVocabulary) -> "FilterConfig":
        """A config that keeps every row of any valid batch."""
        return cls(frozenset(vocab.names), 0.0)

    def normalized(self) -> frozenset[str]:
        return frozenset(normalize_name(n) for n in self.whitelist)

    def allows(self, class_name: str) -> bool:
        return normalize_name(class_name) in self.normalized()


@dataclass(frozen=True)
class FilterTrace:
    kept_indices: tuple[int, ...]
    dropped_indices: tuple[int, ...]
    input_count: int

    @property
    def output_count(self) -> int:
        return len(self.kept_indices)

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "output_count": self.output_count,
            "kept_indices": list(self.kept_indices),
            "dropped_indices": list(self.dropped_indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterTrace":
        trace = cls(tuple(d["kept_indices"]), tuple(d["dropped_indices"]), int(d["input_count"]))
        if trace.output_count != d.get("output_count", trace.output_count):
            raise ValueError("output_count disagrees with kept_indices")
        return trace


def bind_config(cfg: FilterConfig, vocab: ClassVocabulary) -> np.ndarray:
    """Resolve the whitelist to a boolean mask over vocabulary ids.

    Raises FilterConfigError if a whitelisted name is not in the vocabulary.
    """
    unknown = sorted(n for n in cfg.whitelist if n not in vocab)
    if unknown:
        raise FilterConfigError(f"unknown whitelist class: {', '.join(unknown)}")
    mask = np.zeros(len(vocab), dtype=bool)
    for name in cfg.whitelist:
        mask[vocab.lookup(name)] = True
    return mask


def apply_filter(
    dets: DetectionSet, cfg: FilterConfig, vocab: ClassVocabulary
) -> tuple[DetectionSet, FilterTrace]:
    """Keep rows whose class is whitelisted and whose score >= threshold.

    Args:
        dets: batch to filter; must validate against ``vocab``.
        cfg: whitelist and detection threshold.
        vocab: vocabulary the class ids index into.

    Returns:
        The filtered batch (original relative order) and a trace of the
        kept and dropped original row indices.
    """
    allowed = bind_config(cfg, vocab)
    report = validate_detection_set(dets, vocab)
    if not report.ok:
        raise ValueError("invalid detection set: " + "; ".join(map(str, report.violations[:5])))

    keep = allowed[dets.class_ids] & (dets.scores >= cfg.detection_threshold)
    kept = np.flatnonzero(keep)
    dropped = np.flatnonzero(~keep)
    trace = FilterTrace(tuple(int(i) for i in kept), tuple(int(i) for i in dropped), len(dets))
    return dets.take(kept), trace


def read_whitelist(path: str | Path | None = None) -> list[str]:
    """Read a whitelist file: one name per line, ``#`` starts a comment.

    With no path, the bundled driving whitelist is read.
    """
    if path is None:
        text = resources.files("roifilter").joinpath("data/driving_whitelist.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    names = []
    for line in text.splitlines():
        name = line.split("#", 1)[0].strip()
        if name and name not in names:
            names.append(name)
    return names


def load_filter_config(
    path: str | Path | None, vocab: ClassVocabulary, threshold: float = DEFAULT_THRESHOLD
) -> FilterConfig:
    """Whitelist file bound strictly to ``vocab`` (unknown names are an error)."""
    names = read_whitelist(path)
    resolved = [vocab.name(vocab.lookup(n)) if n in vocab else n for n in names]
    cfg = FilterConfig(frozenset(resolved), threshold)
    bind_config(cfg, vocab)
    return cfg


def driving_whitelist(
    vocab: ClassVocabulary, threshold: float = DEFAULT_THRESHOLD, path: str | Path | None = None
) -> tuple[FilterConfig, list[str]]:
    """Canonical driving whitelist intersected with ``vocab``.

    Returns the config and the canonical names missing from the vocabulary
    (logged as warnings). Raises FilterConfigError when nothing overlaps.
    """
    canonical = read_whitelist(path)
    present = [vocab.name(vocab.lookup(n)) for n in canonical if n in vocab]
    missing = [n for n in canonical if n not in vocab]
    if not present:
        raise FilterConfigError("whitelist disjoint from vocabulary")
    for name in missing:
        logger.warning("whitelist class %r not in detector vocabulary", name)
    return FilterConfig(frozenset(present), threshold), missing
