"""Shared fixtures: a per-criterion verdict collector for the acceptance suite."""

import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record ``(number, passed, detail)`` for one acceptance criterion."""

    def record(number, passed, detail):
        _VERDICTS[number] = (bool(passed), detail)
        print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        passed, detail = _VERDICTS[number]
        terminalreporter.write_line(f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
