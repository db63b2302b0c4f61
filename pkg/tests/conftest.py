from __future__ import annotations

import pytest

from layoutloop import synthetic
from layoutloop.retrieval import DatasetIndex

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """Log one pass/fail line for the acceptance summary."""

    def _record(name: str, passed: bool | None, detail: str = "") -> bool | None:
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"{status}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


@pytest.fixture(scope="session")
def train_samples():
    return synthetic.make_samples(60, seed=0, prefix="tr")


@pytest.fixture(scope="session")
def test_samples():
    return synthetic.make_samples(20, seed=1, prefix="te")


@pytest.fixture(scope="session")
def index(train_samples):
    return DatasetIndex.from_samples(train_samples)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return synthetic.write_dataset(root, train=24, test=5, seed=3)
