"""Shared pytest plumbing: collect per-criterion verdicts for the summary."""

from __future__ import annotations

import pytest

_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_report():
    """Callable that records one pass/fail line per acceptance criterion.

    The collected lines are replayed in the terminal summary so a plain
    ``pytest -v`` run ends with one verdict per criterion.
    """

    def record(number: int, passed: bool, details: str) -> None:
        verdict = "PASS" if passed else "FAIL"
        _CRITERION_LINES.append(f"criterion {number}: {verdict} — {details}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)
