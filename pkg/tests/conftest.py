from __future__ import annotations

import contextlib
import time

import pytest

_RESULTS: dict = {}


@pytest.fixture
def criterion():
    """Context manager recording a PASS/FAIL line for one acceptance criterion."""

    @contextlib.contextmanager
    def record(number: int, title: str):
        t0 = time.perf_counter()
        notes: list[str] = []
        status = "FAIL"
        try:
            yield notes
            status = "PASS"
        finally:
            detail = "; ".join(notes)
            line = f"criterion {number} {status}: {title} ({time.perf_counter() - t0:.1f}s){': ' + detail if detail else ''}"
            _RESULTS[number] = line
            print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[number])
