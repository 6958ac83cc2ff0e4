"""Shared fixtures: the acceptance-criteria recorder and its summary hook."""

import pytest

_RESULTS: dict = {}


@pytest.fixture
def criterion():
    """Record a named acceptance criterion verdict, then assert it.

    The recorded verdicts are replayed as one line each in the terminal
    summary so a full run always ends with the criterion scoreboard.
    """

    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        _RESULTS[number] = (name, bool(passed), detail)
        assert passed, f"criterion {number} ({name}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        name, passed, detail = _RESULTS[number]
        line = f"[criterion {number:2d}] {name}: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
