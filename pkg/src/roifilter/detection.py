"""Detection batches and the class vocabulary they index into.

A :class:`DetectionSet` is columnar: every per-detection attribute lives in
its own array and row ``i`` of each array describes the same detection.
Filtering is then a single index selection applied to every column.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

COLUMNS = ("class_ids", "scores", "boxes", "normalized_boxes", "roi_features")


def normalize_name(name: str) -> str:
    """Canonical form used for every class-name comparison."""
    return " ".join(name.strip().lower().split())


def as_tensor_f32(values, ndim: int | None = None) -> np.ndarray:
    """Return a read-only, C-contiguous float32 copy of ``values``."""
    arr = np.array(values, dtype=np.float32, copy=True, order="C")
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d tensor, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


class ClassVocabulary:
    """Ordered, duplicate-free list of detector class names."""

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        index: dict[str, int] = {}
        for i, name in enumerate(names):
            if not isinstance(name, str) or not name.strip():
                raise ValueError(f"class name at index {i} is empty")
            key = normalize_name(name)
            if key in index:
                raise ValueError(f"duplicate class name {name!r} at index {i}")
            index[key] = i
        self._names = names
        self._index = index

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __contains__(self, name: str) -> bool:
        return normalize_name(name) in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassVocabulary) and self._names == other._names

    def __hash__(self) -> int:
        return hash(self._names)

    def __repr__(self) -> str:
        return f"ClassVocabulary({list(self._names)!r})"

    def name(self, class_id: int) -> str:
        return self._names[class_id]

    def lookup(self, name: str) -> int:
        """Index of ``name`` (case-insensitive, whitespace-trimmed)."""
        try:
            return self._index[normalize_name(name)]
        except KeyError:
            raise KeyError(f"class {name!r} not in vocabulary") from None


@dataclass(frozen=True, eq=False)
class DetectionSet:
    """A batch of detections for one image.

    Attributes:
        class_ids: int64 vocabulary indices, shape ``[n]``.
        scores: float32 confidences in ``[0, 1]``, shape ``[n]``.
        boxes: float32 pixel boxes ``(x_min, y_min, x_max, y_max)``, shape ``[n, 4]``.
        normalized_boxes: ``boxes`` divided by image width/height, shape ``[n, 4]``.
        roi_features: float32 region features, shape ``[n, d]``.
        image_size: ``(width, height)`` in pixels.

    Construction does not enforce the cross-column invariants so that a
    malformed batch can still be inspected with :func:`validate_detection_set`.
    """

    class_ids: np.ndarray
    scores: np.ndarray
    boxes: np.ndarray
    normalized_boxes: np.ndarray
    roi_features: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "class_ids", _frozen(np.asarray(self.class_ids, dtype=np.int64)))
        for name in COLUMNS[1:]:
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.float32)))
        w, h = self.image_size
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @classmethod
    def from_boxes(cls, class_ids, scores, boxes, roi_features, image_size) -> "DetectionSet":
        """Build a set, deriving the normalized boxes from pixel boxes."""
        boxes = np.asarray(boxes, dtype=np.float32).reshape(-1, 4)
        return cls(
            class_ids=class_ids,
            scores=scores,
            boxes=boxes,
            normalized_boxes=derive_normalized_boxes(boxes, image_size),
            roi_features=roi_features,
            image_size=image_size,
        )

    @classmethod
    def empty(cls, feature_width: int = 2048, image_size=(1600, 900)) -> "DetectionSet":
        return cls(
            class_ids=np.zeros(0, dtype=np.int64),
            scores=np.zeros(0, dtype=np.float32),
            boxes=np.zeros((0, 4), dtype=np.float32),
            normalized_boxes=np.zeros((0, 4), dtype=np.float32),
            roi_features=np.zeros((0, feature_width), dtype=np.float32),
            image_size=image_size,
        )

    def __len__(self) -> int:
        return int(self.class_ids.shape[0])

    @property
    def feature_width(self) -> int:
        return int(self.roi_features.shape[1]) if self.roi_features.ndim == 2 else 0

    def take(self, indices: Sequence[int]) -> "DetectionSet":
        """Select rows by index, the same index set for every column."""
        idx = np.asarray(indices, dtype=np.int64)
        return DetectionSet(
            class_ids=self.class_ids[idx],
            scores=self.scores[idx],
            boxes=self.boxes[idx],
            normalized_boxes=self.normalized_boxes[idx],
            roi_features=self.roi_features[idx],
            image_size=self.image_size,
        )

    def labels(self, vocab: ClassVocabulary) -> list[str]:
        return [vocab.name(int(c)) for c in self.class_ids]

    def __eq__(self, other) -> bool:
        """Bit-exact equality of every column plus the image size."""
        if not isinstance(other, DetectionSet) or self.image_size != other.image_size:
            return False
        for name in COLUMNS:
            a, b = getattr(self, name), getattr(other, name)
            if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    column: str
    row: int | None
    message: str

    def __str__(self) -> str:
        where = self.column if self.row is None else f"{self.column}[{self.row}]"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def columns(self) -> set[str]:
        return {v.column for v in self.violations}


def validate_detection_set(dets: DetectionSet, vocab: ClassVocabulary) -> ValidationReport:
    """Check every DetectionSet invariant and report all violations found."""
    out: list[Violation] = []
    n = dets.class_ids.shape[0] if dets.class_ids.ndim == 1 else 0

    expected_ndim = {"class_ids": 1, "scores": 1, "boxes": 2, "normalized_boxes": 2, "roi_features": 2}
    shape_ok = {}
    for name in COLUMNS:
        arr = getattr(dets, name)
        ok = arr.ndim == expected_ndim[name]
        if not ok:
            out.append(Violation(name, None, f"expected {expected_ndim[name]}-d column, got shape {arr.shape}"))
        elif name in ("boxes", "normalized_boxes") and arr.shape[1] != 4:
            out.append(Violation(name, None, f"expected 4 box coordinates per row, got {arr.shape[1]}"))
            ok = False
        shape_ok[name] = ok

    lengths = {name: getattr(dets, name).shape[0] if getattr(dets, name).ndim else -1 for name in COLUMNS}
    if len(set(lengths.values())) > 1:
        # The majority length is the reference so the odd column out gets named.
        counts = Counter(lengths.values())
        n = max(counts, key=lambda k: (counts[k], k == lengths["class_ids"]))
        for name, length in lengths.items():
            if length != n:
                out.append(Violation(name, None, f"column length mismatch: {length} rows, expected {n}"))
        n = max(min(lengths.values()), 0)

    w, h = dets.image_size
    if w <= 0 or h <= 0:
        out.append(Violation("image_size", None, f"degenerate image size {dets.image_size}"))

    if shape_ok["class_ids"]:
        for i in np.flatnonzero((dets.class_ids < 0) | (dets.class_ids >= len(vocab))):
            out.append(Violation("class_ids", int(i), f"class id {int(dets.class_ids[i])} outside vocabulary of {len(vocab)}"))

    for name in COLUMNS[1:]:
        arr = getattr(dets, name)
        if not shape_ok[name]:
            continue
        bad = ~np.isfinite(arr)
        if bad.ndim > 1:
            bad = bad.any(axis=1)
        for i in np.flatnonzero(bad):
            out.append(Violation(name, int(i), "non-finite value"))

    if shape_ok["scores"]:
        s = dets.scores
        for i in np.flatnonzero((s < 0) | (s > 1)):
            out.append(Violation("scores", int(i), f"score {float(s[i])} outside [0, 1]"))

    if shape_ok["boxes"]:
        b = dets.boxes
        for i in np.flatnonzero((b[:, 0] > b[:, 2]) | (b[:, 1] > b[:, 3])):
            out.append(Violation("boxes", int(i), "corner order violated (need x_min <= x_max, y_min <= y_max)"))

    if shape_ok["normalized_boxes"]:
        nb = dets.normalized_boxes
        for i in np.flatnonzero(((nb < 0) | (nb > 1)).any(axis=1)):
            out.append(Violation("normalized_boxes", int(i), "coordinate outside [0, 1]"))
        if shape_ok["boxes"] and w > 0 and h > 0 and n > 0:
            expected = np.clip(dets.boxes[:n].astype(np.float64) / np.array([w, h, w, h]), 0.0, 1.0)
            diff = np.abs(nb[:n].astype(np.float64) - expected).max(axis=1)
            for i in np.flatnonzero(~(diff <= 1e-5)):
                out.append(Violation("normalized_boxes", int(i), "does not match boxes scaled by image size"))

    return ValidationReport(tuple(out))


def derive_normalized_boxes(boxes, image_size) -> np.ndarray:
    """Divide each corner by image width/height and clamp to ``[0, 1]``.

    >>> derive_normalized_boxes([[400, 225, 800, 450]], (1600, 900)).tolist()
    [[0.25, 0.25, 0.5, 0.5]]
    """
    w, h = image_size
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate image size {tuple(image_size)}")
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scaled = b / np.array([w, h, w, h], dtype=np.float64)
    return as_tensor_f32(np.clip(scaled, 0.0, 1.0), ndim=2)


@dataclass(frozen=True)
class PipelineDims:
    """Tensor widths of the reference VQA configuration."""

    max_detections: int = 36
    feature_width: int = 2048
    box_width: int = 4
    hidden_width: int = 768
    intermediate_width: int = 3072
    answer_classes: int = 1536

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if int(value) <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.feature_width <= self.hidden_width:
            raise ValueError("feature_width must exceed hidden_width")

    def check(self, dets: DetectionSet) -> list[str]:
        """Problems that would stop ``dets`` from entering an encoder of these dims."""
        problems = []
        if len(dets) > self.max_detections:
            problems.append(f"{len(dets)} detections exceed max_detections={self.max_detections}")
        if dets.feature_width != self.feature_width:
            problems.append(f"feature width {dets.feature_width} != {self.feature_width}")
        if dets.boxes.ndim != 2 or dets.boxes.shape[1] != self.box_width:
            problems.append(f"box width != {self.box_width}")
        return problems


DEFAULT_DIMS = PipelineDims()
