import logging

import numpy as np
import pytest

from roifilter.detection import ClassVocabulary, DetectionSet, validate_detection_set
from roifilter.feature_filter import (
    DEFAULT_THRESHOLD,
    FilterConfig,
    FilterConfigError,
    apply_filter,
    driving_whitelist,
    load_filter_config,
    read_whitelist,
)

from conftest import random_detection_set
from oracles import brute_force_filter

CANONICAL = read_whitelist()


def test_f1_filters_36_to_17(f1):
    dets, vocab = f1
    cfg, missing = driving_whitelist(vocab)
    assert missing == []
    out, trace = apply_filter(dets, cfg, vocab)
    assert (len(dets), len(out)) == (36, 17)
    assert out.roi_features.shape == (17, 2048)
    assert trace.input_count == 36 and trace.output_count == 17


def test_identity_config_keeps_everything(rng, vocab):
    dets = random_detection_set(rng, 30, len(vocab))
    out, trace = apply_filter(dets, FilterConfig.identity(vocab), vocab)
    assert out == dets
    assert trace.kept_indices == tuple(range(30)) and trace.dropped_indices == ()


def test_matches_row_scan_oracle_on_50_rows(vocab):
    rng = np.random.default_rng(50)
    dets = random_detection_set(rng, 50, len(vocab), d=2048)
    cfg = FilterConfig(frozenset({"car", "person"}), 0.6)
    out, trace = apply_filter(dets, cfg, vocab)
    expected, kept = brute_force_filter(dets, vocab.names, cfg.whitelist, 0.6)
    assert out == expected
    assert list(trace.kept_indices) == kept


def test_threshold_is_inclusive(vocab):
    dets = DetectionSet.from_boxes([vocab.lookup("car")] * 3, [0.49, 0.5, 0.51],
                                   [[0, 0, 1, 1]] * 3, np.zeros((3, 2)), (10, 10))
    out, trace = apply_filter(dets, FilterConfig({"car"}, 0.5), vocab)
    assert trace.kept_indices == (1, 2)


def test_matching_is_case_insensitive_but_exact():
    vocab = ClassVocabulary(["railroad", "Road", "car"])
    dets = DetectionSet.from_boxes([0, 1, 2], [0.9] * 3, [[0, 0, 1, 1]] * 3, np.zeros((3, 2)), (10, 10))
    out, trace = apply_filter(dets, FilterConfig({" road "}, 0.0), vocab)
    assert trace.kept_indices == (1,)


def test_unknown_whitelist_class_fails_fast(rng, vocab):
    dets = random_detection_set(rng, 5, len(vocab))
    with pytest.raises(FilterConfigError, match="unknown whitelist class"):
        apply_filter(dets, FilterConfig({"car", "unicorn"}, 0.5), vocab)


def test_invalid_input_rejected(rng, vocab):
    dets = random_detection_set(rng, 5, len(vocab))
    bad = DetectionSet(dets.class_ids, dets.scores[:4], dets.boxes, dets.normalized_boxes, dets.roi_features, dets.image_size)
    with pytest.raises(ValueError, match="invalid detection set"):
        apply_filter(bad, FilterConfig.identity(vocab), vocab)


@pytest.mark.parametrize("t", [-0.1, 1.01, float("nan")])
def test_threshold_range(t):
    with pytest.raises(FilterConfigError):
        FilterConfig({"car"}, t)


def test_empty_input(vocab):
    out, trace = apply_filter(DetectionSet.empty(), FilterConfig({"car"}), vocab)
    assert len(out) == 0 and trace.input_count == 0
    assert validate_detection_set(out, vocab).ok


class TestDrivingWhitelist:
    def test_partial_vocabulary(self, caplog):
        vocab = ClassVocabulary(["car", "truck", "tree", "sky", "road"])
        with caplog.at_level(logging.WARNING):
            cfg, missing = driving_whitelist(vocab)
        assert cfg.whitelist == {"car", "truck", "road"}
        assert cfg.detection_threshold == DEFAULT_THRESHOLD == 0.5
        assert set(missing) == set(CANONICAL) - {"car", "truck", "road"}
        assert len(caplog.records) == len(missing)

    def test_closure(self):
        cfg, missing = driving_whitelist(ClassVocabulary(CANONICAL))
        assert cfg.whitelist == set(CANONICAL) and missing == []

    def test_disjoint(self):
        with pytest.raises(FilterConfigError, match="whitelist disjoint from vocabulary"):
            driving_whitelist(ClassVocabulary(["tree", "sky", "building"]))

    def test_canonical_list_contents(self):
        assert CANONICAL == [
            "road", "lane line", "curb", "sidewalk", "crosswalk", "traffic sign", "traffic light",
            "car", "truck", "bus", "motorcycle", "bicycle", "person", "trailer", "construction barrier",
        ]


def test_whitelist_file_parsing(tmp_path, vocab):
    path = tmp_path / "wl.txt"
    path.write_text("# comment\n Car \n\nperson  # trailing comment\ncar\n", encoding="utf-8")
    assert read_whitelist(path) == ["Car", "person", "car"]
    cfg = load_filter_config(path, vocab, 0.3)
    assert cfg.whitelist == {"car", "person"} and cfg.detection_threshold == 0.3
    path.write_text("car\nunicorn\n", encoding="utf-8")
    with pytest.raises(FilterConfigError, match="unknown whitelist class: unicorn"):
        load_filter_config(path, vocab)
