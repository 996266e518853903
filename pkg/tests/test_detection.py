import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roifilter.detection import (
    ClassVocabulary,
    DetectionSet,
    PipelineDims,
    derive_normalized_boxes,
    validate_detection_set,
)

from conftest import random_detection_set


def test_full_36_row_set_is_valid(rng, vocab):
    dets = random_detection_set(rng, 36, len(vocab), d=2048)
    assert dets.roi_features.shape == (36, 2048)
    assert dets.boxes.shape == (36, 4)
    assert validate_detection_set(dets, vocab).ok


def test_empty_set_is_valid(vocab):
    assert validate_detection_set(DetectionSet.empty(), vocab).ok


def test_truncated_scores_column_reported(rng, vocab):
    dets = random_detection_set(rng, 36, len(vocab))
    bad = DetectionSet(dets.class_ids, dets.scores[:35], dets.boxes, dets.normalized_boxes,
                       dets.roi_features, dets.image_size)
    report = validate_detection_set(bad, vocab)
    assert not report.ok
    assert any(v.column == "scores" and "column length mismatch" in v.message for v in report.violations)
    assert report.columns() == {"scores"}


def test_class_id_out_of_range(rng, vocab):
    dets = random_detection_set(rng, 10, len(vocab))
    ids = dets.class_ids.copy()
    ids[3] = len(vocab)
    bad = DetectionSet(ids, dets.scores, dets.boxes, dets.normalized_boxes, dets.roi_features, dets.image_size)
    report = validate_detection_set(bad, vocab)
    assert [(v.column, v.row) for v in report.violations] == [("class_ids", 3)]


def _replace(dets, **cols):
    fields = dict(class_ids=dets.class_ids, scores=dets.scores, boxes=dets.boxes,
                  normalized_boxes=dets.normalized_boxes, roi_features=dets.roi_features,
                  image_size=dets.image_size)
    fields.update(cols)
    return DetectionSet(**fields)


def _corruptions(dets, row):
    """(column expected in the report, corrupted set) pairs."""
    scores = dets.scores.copy()
    scores[row] = 1.5
    feats = dets.roi_features.copy()
    feats[row, 0] = np.nan
    boxes = dets.boxes.copy()
    boxes[row, 0] = boxes[row, 2] + 1
    nb = dets.normalized_boxes.copy()
    nb[row, 1] += 0.01 if nb[row, 1] < 0.5 else -0.01
    ids = dets.class_ids.copy()
    ids[row] = -1
    return [
        ("scores", _replace(dets, scores=scores)),
        ("roi_features", _replace(dets, roi_features=feats)),
        ("boxes", _replace(dets, boxes=boxes)),
        ("normalized_boxes", _replace(dets, normalized_boxes=nb)),
        ("class_ids", _replace(dets, class_ids=ids)),
        ("boxes", _replace(dets, boxes=dets.boxes[:-1])),
    ]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_any_single_corruption_is_named(seed, n):
    rng = np.random.default_rng(seed)
    vocab = ClassVocabulary([f"c{i}" for i in range(7)])
    dets = random_detection_set(rng, n, len(vocab))
    assert validate_detection_set(dets, vocab).ok
    row = int(rng.integers(0, n))
    for column, bad in _corruptions(dets, row):
        report = validate_detection_set(bad, vocab)
        assert not report.ok, column
        assert column in report.columns(), (column, report.violations)


def test_degenerate_image_size_reported(rng, vocab):
    dets = random_detection_set(rng, 3, len(vocab))
    assert "image_size" in validate_detection_set(_replace(dets, image_size=(0, 900)), vocab).columns()


class TestNormalizedBoxes:
    def test_full_frame(self):
        assert derive_normalized_boxes([[0, 0, 1600, 900]], (1600, 900)).tolist() == [[0, 0, 1, 1]]

    def test_quarter_box(self):
        out = derive_normalized_boxes([[400, 225, 800, 450]], (1600, 900))
        np.testing.assert_allclose(out, [[0.25, 0.25, 0.5, 0.5]], atol=0)

    def test_zero_box(self):
        assert derive_normalized_boxes([[0, 0, 0, 0]], (1600, 900)).tolist() == [[0, 0, 0, 0]]

    def test_clamped(self):
        assert derive_normalized_boxes([[-10, 0, 1700, 950]], (1600, 900)).tolist() == [[0, 0, 1, 1]]

    @pytest.mark.parametrize("size", [(0, 900), (1600, 0), (-1, 5)])
    def test_degenerate_image(self, size):
        with pytest.raises(ValueError, match="degenerate image size"):
            derive_normalized_boxes([[0, 0, 1, 1]], size)

    @settings(max_examples=200, deadline=None)
    @given(
        w=st.integers(1, 4000), h=st.integers(1, 4000),
        fr=st.lists(st.tuples(*[st.floats(0, 1)] * 4), min_size=0, max_size=20),
    )
    def test_denormalize_round_trip(self, w, h, fr):
        boxes = np.array([[min(a, c) * w, min(b, d) * h, max(a, c) * w, max(b, d) * h] for a, b, c, d in fr],
                         dtype=np.float32).reshape(-1, 4)
        scale = np.array([w, h, w, h], dtype=np.float64)
        back = derive_normalized_boxes(boxes, (w, h)).astype(np.float64) * scale
        # Measured as a fraction of the image side: float32 pixel values near
        # 4000 px are only resolved to ~2.4e-4 px.
        assert np.all(np.abs(back - boxes) / scale <= 1e-5)


def test_vocabulary_lookup_round_trip():
    vocab = ClassVocabulary(["Car", "lane line", "tree"])
    for i, name in enumerate(vocab.names):
        assert vocab.lookup(name) == i
    assert vocab.lookup("  CAR ") == 0
    with pytest.raises(ValueError, match="duplicate"):
        ClassVocabulary(["car", "Car"])
    with pytest.raises(ValueError, match="empty"):
        ClassVocabulary(["car", " "])


def test_detection_set_is_immutable(rng, vocab):
    dets = random_detection_set(rng, 4, len(vocab))
    with pytest.raises(ValueError):
        dets.scores[0] = 0.1
    with pytest.raises(AttributeError):
        dets.scores = None


def test_pipeline_dims_defaults():
    dims = PipelineDims()
    assert (dims.max_detections, dims.feature_width, dims.box_width) == (36, 2048, 4)
    assert dims.intermediate_width == 4 * dims.hidden_width
    assert dims.answer_classes == 1536
    with pytest.raises(ValueError):
        PipelineDims(feature_width=512)
    with pytest.raises(ValueError):
        PipelineDims(max_detections=0)


def test_pipeline_dims_check(rng, vocab):
    dims = PipelineDims()
    assert dims.check(random_detection_set(rng, 36, len(vocab), d=2048)) == []
    problems = dims.check(random_detection_set(rng, 37, len(vocab), d=16))
    assert len(problems) == 2
