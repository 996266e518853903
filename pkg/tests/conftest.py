from pathlib import Path

import numpy as np
import pytest

from roifilter.detection import ClassVocabulary, DetectionSet
from roifilter.ingestion import load_detection_dump
from roifilter.pipeline import MOCK_VOCABULARY

DATA = Path(__file__).parent / "data"


def random_detection_set(rng: np.random.Generator, n: int, vocab_size: int, d: int = 16,
                         image_size=(1600, 900)) -> DetectionSet:
    w, h = image_size
    x = np.sort(rng.uniform(0, w, (n, 2)), axis=1)
    y = np.sort(rng.uniform(0, h, (n, 2)), axis=1)
    boxes = np.stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]], axis=1)
    scores = rng.random(n).astype(np.float32)
    # Exact grid values make threshold ties likely.
    scores[rng.random(n) < 0.2] = np.float32(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
    return DetectionSet.from_boxes(
        rng.integers(0, vocab_size, n),
        scores,
        boxes,
        rng.standard_normal((n, d), dtype=np.float32),
        image_size,
    )


@pytest.fixture
def vocab():
    return ClassVocabulary(MOCK_VOCABULARY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def f1():
    return load_detection_dump(DATA / "f1.roif")


@pytest.fixture(scope="session")
def f2_root():
    return DATA / "f2"


# ----------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    previous = _CRITERIA.get(number, (title, "PASS"))[1]
    if report.when == "call" or failed:
        _CRITERIA[number] = (title, "FAIL" if failed or previous == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")
