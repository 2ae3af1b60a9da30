import numpy as np
import pytest
from hypothesis import settings

from helpers import household_db

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_VERDICTS: list[str] = []


@pytest.fixture
def household():
    return household_db()


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict(capsys):
    """Print and remember one PASS/FAIL line, then assert on it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
