import numpy as np
import pytest

from toplabel_calib.data import LabeledDataset

ACCEPTANCE_LINES: list[str] = []


def make_dataset(names, labels, scores, scale_max=1.0):
    scores = np.asarray(scores, dtype=np.float64)
    scores = scores / scores.sum(axis=1, keepdims=True)
    ids = tuple(f"s{i}" for i in range(len(labels)))
    return LabeledDataset(tuple(names), ids, np.asarray(labels), scores, scale_max)


@pytest.fixture
def tiny():
    """Ten samples over three categories, built by hand."""
    scores = [
        [0.7, 0.2, 0.1],
        [0.6, 0.3, 0.1],
        [0.5, 0.4, 0.1],
        [0.9, 0.05, 0.05],
        [0.2, 0.7, 0.1],
        [0.1, 0.8, 0.1],
        [0.3, 0.6, 0.1],
        [0.1, 0.2, 0.7],
        [0.2, 0.2, 0.6],
        [0.4, 0.1, 0.5],
    ]
    labels = [0, 1, 0, 0, 1, 1, 2, 2, 0, 2]
    return make_dataset(("a", "b", "c"), labels, scores)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
