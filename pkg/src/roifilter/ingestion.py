"""Corpus files: manifests, questions, human answers, ratings and detection dumps.

Text records are line-oriented UTF-8 JSON (one object per line), except
ratings, which are CSV with header ``question_id,variant,rater_id,rating``.
Loaders never repair input. Every problem found in a file is collected with
its line number and raised together as one :class:`IngestionError`.

Detection dump layout (all integers little-endian)::

    b"ROIF"  u16 version
    u32 vocab_count, then per name: u32 byte_length, UTF-8 bytes
    tagged blocks: u8 column_id, u8 ndim, u32 * ndim dims, payload

Column ids 0-4 are class_ids (u32), scores, boxes, normalized_boxes and
roi_features (float32, row-major). Block 5 holds the image size as two u32.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import os
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .detection import COLUMNS, ClassVocabulary, DetectionSet, validate_detection_set

logger = logging.getLogger(__name__)

CORPUS_ENV = "ROIFILTER_CORPUS"
EXPECTED_ANNOTATORS = 10
SAMPLES_PER_CAMERA = 2

MAGIC = b"ROIF"
FORMAT_VERSION = 1
IMAGE_SIZE_BLOCK = 5
_COLUMN_IDS = {name: i for i, name in enumerate(COLUMNS)}
_NDIM = {"class_ids": 1, "scores": 1, "boxes": 2, "normalized_boxes": 2, "roi_features": 2}


@dataclass(frozen=True)
class Problem:
    path: str
    line: int | None
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: {self.message}" if self.line else f"{self.path}: {self.message}"


class IngestionError(ValueError):
    """One or more located problems in an input file."""

    def __init__(self, problems: Iterable[Problem]):
        self.problems = tuple(problems)
        super().__init__("\n".join(str(p) for p in self.problems))


class CameraChannel(str, enum.Enum):
    FRONT = "front"
    FRONT_LEFT = "front_left"
    FRONT_RIGHT = "front_right"
    BACK = "back"
    BACK_LEFT = "back_left"
    BACK_RIGHT = "back_right"


@dataclass(frozen=True)
class SampleManifestEntry:
    sample_id: str
    camera: CameraChannel
    image_ref: str
    question_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "camera": self.camera.value,
            "image_ref": self.image_ref,
            "question_ids": list(self.question_ids),
        }


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    sample_id: str

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "sample_id": self.sample_id}


@dataclass(frozen=True)
class AnnotatorAnswer:
    rater_id: str
    answer: str
    features: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {"rater_id": self.rater_id, "answer": self.answer, "features": sorted(self.features)}


@dataclass(frozen=True)
class HumanAnswerRecord:
    question_id: str
    answers: tuple[AnnotatorAnswer, ...]
    consensus_answer: str = field(init=False)
    consensus_count: int = field(init=False)
    tie: bool = field(init=False)

    def __post_init__(self):
        if not self.answers:
            raise ValueError(f"question {self.question_id}: no annotator answers")
        winner, count, tie = majority_vote([normalize_answer(a.answer) for a in self.answers])
        object.__setattr__(self, "consensus_answer", winner)
        object.__setattr__(self, "consensus_count", count)
        object.__setattr__(self, "tie", tie)

    @property
    def observed_features(self) -> frozenset[str]:
        """Union of the features every annotator reported."""
        return frozenset().union(*(a.features for a in self.answers))

    def to_dict(self) -> dict:
        return {"question_id": self.question_id, "answers": [a.to_dict() for a in self.answers]}


@dataclass(frozen=True)
class Rating:
    question_id: str
    variant: str
    rater_id: str
    rating: int

    @property
    def normalized(self) -> float:
        """Map the 1-5 scale onto [0, 1]."""
        return (self.rating - 1) / 4


_TERMINAL_PUNCT = re.compile(r"[\s.!?,;:]+$")


def normalize_answer(text: str) -> str:
    """Lowercase, trim, collapse whitespace and strip terminal punctuation."""
    return _TERMINAL_PUNCT.sub("", " ".join(text.lower().split()))


def majority_vote(answers: list[str]) -> tuple[str, int, bool]:
    """Most frequent answer, its count and whether the top count was shared.

    Ties go to the lexicographically smallest answer.
    """
    if not answers:
        raise ValueError("majority vote over an empty list")
    counts = Counter(answers)
    top = max(counts.values())
    leaders = sorted(a for a, c in counts.items() if c == top)
    return leaders[0], top, len(leaders) > 1


# ---------------------------------------------------------------- JSONL files


def _read_jsonl(path: Path, problems: list[Problem]) -> list[tuple[int, dict]]:
    records = []
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        problems.append(Problem(str(path), None, f"not UTF-8: {exc}"))
        return records
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(Problem(str(path), lineno, f"parse error: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            problems.append(Problem(str(path), lineno, "record is not a JSON object"))
            continue
        records.append((lineno, obj))
    return records


def _require_str(obj: dict, key: str, where: tuple[str, int], problems: list[Problem]) -> str | None:
    value = obj.get(key)
    if not isinstance(value, str) or not value.strip():
        problems.append(Problem(where[0], where[1], f"field {key!r} must be a non-empty string"))
        return None
    return value


def _require_str_list(obj: dict, key: str, where, problems) -> list[str] | None:
    value = obj.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) and v.strip() for v in value):
        problems.append(Problem(where[0], where[1], f"field {key!r} must be a list of non-empty strings"))
        return None
    return value


def load_manifest(path: str | Path) -> list[SampleManifestEntry]:
    path = Path(path)
    problems: list[Problem] = []
    entries, seen = [], {}
    for lineno, obj in _read_jsonl(path, problems):
        where = (str(path), lineno)
        sid = _require_str(obj, "sample_id", where, problems)
        ref = _require_str(obj, "image_ref", where, problems)
        qids = _require_str_list(obj, "question_ids", where, problems)
        try:
            camera = CameraChannel(obj.get("camera"))
        except ValueError:
            problems.append(Problem(*where, f"unknown camera {obj.get('camera')!r}"))
            camera = None
        if sid is not None:
            if sid in seen:
                problems.append(Problem(*where, f"duplicate sample_id {sid!r} (first on line {seen[sid]})"))
                continue
            seen[sid] = lineno
        if qids is not None and len(set(qids)) != len(qids):
            problems.append(Problem(*where, f"duplicate question_id in sample {sid!r}"))
            continue
        if None not in (sid, ref, qids, camera):
            entries.append(SampleManifestEntry(sid, camera, ref, tuple(qids)))
    if problems:
        raise IngestionError(problems)
    lint_camera_counts(entries)
    return entries


def lint_camera_counts(entries: list[SampleManifestEntry]) -> list[str]:
    counts = Counter(e.camera for e in entries)
    notes = [
        f"camera {cam.value}: {counts.get(cam, 0)} samples (expected {SAMPLES_PER_CAMERA})"
        for cam in CameraChannel
        if counts.get(cam, 0) != SAMPLES_PER_CAMERA
    ]
    for note in notes:
        logger.warning(note)
    return notes


def load_questions(path: str | Path) -> list[Question]:
    path = Path(path)
    problems: list[Problem] = []
    questions, seen = [], {}
    for lineno, obj in _read_jsonl(path, problems):
        where = (str(path), lineno)
        qid = _require_str(obj, "id", where, problems)
        text = _require_str(obj, "text", where, problems)
        sid = _require_str(obj, "sample_id", where, problems)
        if qid is not None:
            if qid in seen:
                problems.append(Problem(*where, f"duplicate question id {qid!r} (first on line {seen[qid]})"))
                continue
            seen[qid] = lineno
        if None not in (qid, text, sid):
            questions.append(Question(qid, text, sid))
    if problems:
        raise IngestionError(problems)
    return questions


def load_human_answers(path: str | Path, known_question_ids: Iterable[str] | None = None) -> list[HumanAnswerRecord]:
    path = Path(path)
    known = None if known_question_ids is None else set(known_question_ids)
    problems: list[Problem] = []
    records, seen = [], {}
    for lineno, obj in _read_jsonl(path, problems):
        where = (str(path), lineno)
        qid = _require_str(obj, "question_id", where, problems)
        raw = obj.get("answers")
        if not isinstance(raw, list) or not raw:
            problems.append(Problem(*where, "field 'answers' must be a non-empty list"))
            continue
        answers, ok = [], True
        for k, a in enumerate(raw):
            if not isinstance(a, dict):
                problems.append(Problem(*where, f"answers[{k}] is not an object"))
                ok = False
                continue
            rater = _require_str(a, "rater_id", where, problems)
            text = _require_str(a, "answer", where, problems)
            feats = _require_str_list(a, "features", where, problems)
            if None in (rater, text, feats):
                ok = False
                continue
            answers.append(AnnotatorAnswer(rater, text, frozenset(feats)))
        raters = [a.rater_id for a in answers]
        if len(set(raters)) != len(raters):
            problems.append(Problem(*where, f"duplicate rater_id in question {qid!r}"))
            ok = False
        if qid is None or not ok:
            continue
        if known is not None and qid not in known:
            problems.append(Problem(*where, f"dangling question_id {qid!r}"))
            continue
        if qid in seen:
            problems.append(Problem(*where, f"duplicate question_id {qid!r} (first on line {seen[qid]})"))
            continue
        seen[qid] = lineno
        if len(answers) != EXPECTED_ANNOTATORS:
            logger.warning("%s:%d: %d annotators for %s (expected %d)", path, lineno, len(answers), qid, EXPECTED_ANNOTATORS)
        records.append(HumanAnswerRecord(qid, tuple(answers)))
    if problems:
        raise IngestionError(problems)
    return records


RATINGS_HEADER = ["question_id", "variant", "rater_id", "rating"]
VARIANTS = ("pretrained", "filtered")


def load_ratings(path: str | Path, known_question_ids: Iterable[str] | None = None) -> list[Rating]:
    path = Path(path)
    known = None if known_question_ids is None else set(known_question_ids)
    problems: list[Problem] = []
    ratings, seen = [], {}
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError([Problem(str(path), None, f"not UTF-8: {exc}")]) from None
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header != RATINGS_HEADER:
        raise IngestionError([Problem(str(path), 1, f"expected header {','.join(RATINGS_HEADER)}")])
    for row in reader:
        lineno = reader.line_num
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != 4:
            problems.append(Problem(str(path), lineno, f"expected 4 fields, got {len(row)}"))
            continue
        qid, variant, rater, raw = (cell.strip() for cell in row)
        if not qid or not rater:
            problems.append(Problem(str(path), lineno, "empty question_id or rater_id"))
            continue
        if variant not in VARIANTS:
            problems.append(Problem(str(path), lineno, f"unknown variant {variant!r}"))
            continue
        if not re.fullmatch(r"[1-5]", raw):
            problems.append(Problem(str(path), lineno, f"rating {raw!r} not an integer in 1..5"))
            continue
        if known is not None and qid not in known:
            problems.append(Problem(str(path), lineno, f"dangling question_id {qid!r}"))
            continue
        key = (qid, variant, rater)
        if key in seen:
            problems.append(Problem(str(path), lineno, f"duplicate rating for {key} (first on line {seen[key]})"))
            continue
        seen[key] = lineno
        ratings.append(Rating(qid, variant, rater, int(raw)))
    if problems:
        raise IngestionError(problems)
    return ratings


def _write_jsonl(path: Path, records: Iterable[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records]
    Path(path).write_text("".join(lines), encoding="utf-8")


def save_manifest(entries: Iterable[SampleManifestEntry], path: str | Path) -> None:
    _write_jsonl(Path(path), (e.to_dict() for e in entries))


def save_questions(questions: Iterable[Question], path: str | Path) -> None:
    _write_jsonl(Path(path), (q.to_dict() for q in questions))


def save_human_answers(records: Iterable[HumanAnswerRecord], path: str | Path) -> None:
    _write_jsonl(Path(path), (r.to_dict() for r in records))


def save_ratings(ratings: Iterable[Rating], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for r in ratings:
            writer.writerow([r.question_id, r.variant, r.rater_id, r.rating])


# ------------------------------------------------------------------- corpus


@dataclass
class Corpus:
    root: Path
    manifest: list[SampleManifestEntry]
    questions: list[Question]
    answers: list[HumanAnswerRecord]
    ratings: list[Rating]

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.root / p

    def sample(self, sample_id: str) -> SampleManifestEntry:
        return next(e for e in self.manifest if e.sample_id == sample_id)


CORPUS_FILES = {
    "manifest": "manifest.jsonl",
    "questions": "questions.jsonl",
    "answers": "answers.jsonl",
    "ratings": "ratings.csv",
}


def resolve_corpus_root(root: str | Path | None) -> Path:
    if root is None:
        root = os.environ.get(CORPUS_ENV)
    if not root:
        raise IngestionError([Problem("<config>", None, f"no corpus root given (use --corpus or ${CORPUS_ENV})")])
    return Path(root)


def load_corpus(root: str | Path | None, require_scoring: bool = True) -> Corpus:
    """Load and cross-check every corpus file, collecting all problems."""
    root = resolve_corpus_root(root)
    problems: list[Problem] = []

    def attempt(fn, *args):
        try:
            return fn(*args)
        except IngestionError as exc:
            problems.extend(exc.problems)
        except OSError as exc:
            problems.append(Problem(str(args[0]), None, f"cannot read: {exc.strerror or exc}"))
        return []

    manifest = attempt(load_manifest, root / CORPUS_FILES["manifest"])
    questions = attempt(load_questions, root / CORPUS_FILES["questions"])
    qids = [q.id for q in questions]
    answers, ratings = [], []
    if require_scoring:
        answers = attempt(load_human_answers, root / CORPUS_FILES["answers"], qids)
        ratings = attempt(load_ratings, root / CORPUS_FILES["ratings"], qids)

    by_id = {q.id: q for q in questions}
    mpath = str(root / CORPUS_FILES["manifest"])
    sample_ids = {e.sample_id for e in manifest}
    listed = set()
    for e in manifest:
        for qid in e.question_ids:
            listed.add(qid)
            if qid not in by_id and questions:
                problems.append(Problem(mpath, None, f"sample {e.sample_id}: dangling question_id {qid!r}"))
            elif qid in by_id and by_id[qid].sample_id != e.sample_id:
                problems.append(Problem(mpath, None, f"question {qid} belongs to {by_id[qid].sample_id}, listed under {e.sample_id}"))
    for q in questions:
        if manifest and q.sample_id not in sample_ids:
            problems.append(Problem(str(root / CORPUS_FILES["questions"]), None, f"question {q.id}: unknown sample_id {q.sample_id!r}"))
        elif manifest and q.id not in listed:
            problems.append(Problem(mpath, None, f"question {q.id} not listed by sample {q.sample_id}"))
    if require_scoring and questions:
        answered = {r.question_id for r in answers}
        for q in questions:
            if answers and q.id not in answered:
                problems.append(Problem(str(root / CORPUS_FILES["answers"]), None, f"no human answers for question {q.id}"))
    if problems:
        raise IngestionError(problems)
    return Corpus(root, manifest, questions, answers, ratings)


# ------------------------------------------------------------ detection dump


def save_detection_dump(dets: DetectionSet, vocab: ClassVocabulary, path: str | Path) -> None:
    report = validate_detection_set(dets, vocab)
    if not report.ok:
        raise ValueError("refusing to save invalid detection set: " + str(report.violations[0]))
    Path(path).write_bytes(encode_detection_dump(dets, vocab))


def encode_detection_dump(dets: DetectionSet, vocab: ClassVocabulary) -> bytes:
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(vocab))]
    for name in vocab.names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    for name in COLUMNS:
        arr = getattr(dets, name)
        arr = arr.astype("<u4") if name == "class_ids" else arr.astype("<f4")
        parts.append(struct.pack("<BB", _COLUMN_IDS[name], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    parts.append(struct.pack("<BBI", IMAGE_SIZE_BLOCK, 1, 2) + struct.pack("<2I", *dets.image_size))
    return b"".join(parts)


class DumpFormatError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DumpFormatError(f"payload length mismatch: {what} needs {n} bytes at offset {self.pos}, {len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_detection_dump(path: str | Path) -> tuple[DetectionSet, ClassVocabulary]:
    return decode_detection_dump(Path(path).read_bytes())


def decode_detection_dump(data: bytes) -> tuple[DetectionSet, ClassVocabulary]:
    if len(data) < len(MAGIC) and MAGIC.startswith(data):
        raise DumpFormatError(f"payload length mismatch: {len(data)}-byte file is shorter than the header")
    if data[:4] != MAGIC:
        raise DumpFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.pos = len(MAGIC)
    (version,) = r.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise DumpFormatError(f"unsupported format version {version}")
    (count,) = r.unpack("<I", "vocabulary count")
    names = []
    for i in range(count):
        (length,) = r.unpack("<I", f"vocabulary name {i} length")
        try:
            names.append(r.take(length, f"vocabulary name {i}").decode("utf-8"))
        except UnicodeDecodeError:
            raise DumpFormatError(f"vocabulary name {i} is not UTF-8") from None
    try:
        vocab = ClassVocabulary(names)
    except ValueError as exc:
        raise DumpFormatError(f"bad vocabulary: {exc}") from None

    columns: dict[str, np.ndarray] = {}
    image_size = None
    while r.pos < len(data):
        block_id, ndim = r.unpack("<BB", "block header")
        dims = r.unpack(f"<{ndim}I", f"block {block_id} dims")
        if block_id == IMAGE_SIZE_BLOCK:
            if dims != (2,):
                raise DumpFormatError(f"image size block has dims {dims}")
            if image_size is not None:
                raise DumpFormatError("duplicate image size block")
            image_size = r.unpack("<2I", "image size")
            continue
        if block_id >= len(COLUMNS):
            raise DumpFormatError(f"unknown block id {block_id}")
        name = COLUMNS[block_id]
        if name in columns:
            raise DumpFormatError(f"duplicate column {name}")
        if ndim != _NDIM[name]:
            raise DumpFormatError(f"column {name}: ndim {ndim}, expected {_NDIM[name]}")
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        payload = r.take(nbytes, f"column {name} payload")
        dtype = "<u4" if name == "class_ids" else "<f4"
        arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
        if dtype == "<f4" and not np.isfinite(arr).all():
            raise DumpFormatError(f"column {name}: non-finite floats")
        columns[name] = arr
    missing = [c for c in COLUMNS if c not in columns]
    if missing:
        raise DumpFormatError(f"payload length mismatch: missing column(s) {', '.join(missing)}")
    if image_size is None:
        raise DumpFormatError("payload length mismatch: missing image size block")

    dets = DetectionSet(
        class_ids=columns["class_ids"].astype(np.int64),
        scores=columns["scores"].astype(np.float32),
        boxes=columns["boxes"].astype(np.float32),
        normalized_boxes=columns["normalized_boxes"].astype(np.float32),
        roi_features=columns["roi_features"].astype(np.float32),
        image_size=image_size,
    )
    report = validate_detection_set(dets, vocab)
    if not report.ok:
        raise DumpFormatError("invalid detection set: " + "; ".join(map(str, report.violations[:5])))
    return dets, vocab
