import pathlib

import pytest

from batchmap.ingest import Dataset
from batchmap.model import ImageDetections, ImageGroundTruth

DATA = pathlib.Path(__file__).parent / "data"

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def data_dir() -> pathlib.Path:
    return DATA


@pytest.fixture
def micro_dataset() -> Dataset:
    """Two images, two classes; class 0 has one difficult box nobody touches."""
    gt = [
        ImageGroundTruth("A", [(0, 0, 9, 9), (20, 20, 29, 29)], [0, 0], [False, True]),
        ImageGroundTruth("B", [(0, 0, 9, 9)], [1], [False]),
    ]
    det = [
        ImageDetections("A", [(0, 0, 9, 9), (1, 0, 10, 9), (0, 0, 9, 9)], [0, 0, 1], [0.9, 0.8, 0.7]),
        ImageDetections("B", [(0, 0, 6, 9)], [1], [0.95]),
    ]
    return Dataset.from_records(gt, det)


@pytest.fixture
def divergent_dataset() -> Dataset:
    """One detection overlapping a difficult box (IoU .8) and an easy box (IoU .6)."""
    gt = [ImageGroundTruth("x", [(0, 0, 9, 5), (0, 0, 9, 7)], [0, 0], [False, True])]
    det = [ImageDetections("x", [(0, 0, 9, 9)], [0], [0.9])]
    return Dataset.from_records(gt, det)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
