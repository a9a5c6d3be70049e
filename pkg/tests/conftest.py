"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

_CRITERIA: list = []


def record_criterion(label: str, passed: bool, detail: str) -> None:
    """Store one acceptance outcome and echo it to the captured output."""
    _CRITERIA.append((label, bool(passed), detail))
    print(f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail})")


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail})")
