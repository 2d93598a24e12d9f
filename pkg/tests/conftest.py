import numpy as np
import pytest

from handwash.dataset import LabelRegistry
from handwash.fixtures import generate_corpus


@pytest.fixture(scope="session")
def registry():
    return LabelRegistry()


@pytest.fixture(scope="session")
def clip_corpus(tmp_path_factory):
    """3 classes x 2 encoded clips x 30 frames."""
    return generate_corpus(tmp_path_factory.mktemp("clips"), per_class=2, frames_per_clip=30, seed=3)


@pytest.fixture(scope="session")
def frame_corpus(tmp_path_factory):
    """3 classes x 4 clips x 12 frames written directly as stills."""
    return generate_corpus(tmp_path_factory.mktemp("frames"), per_class=4, frames_per_clip=12, seed=5, fmt="frames")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        ACCEPTANCE_RESULTS[self.number] = (self.title, False, "not finished")
        return self

    def __exit__(self, exc_type, exc, tb):
        detail = self.detail if exc_type is None else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        ACCEPTANCE_RESULTS[self.number] = (self.title, exc_type is None, detail)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title} -- {detail}")
