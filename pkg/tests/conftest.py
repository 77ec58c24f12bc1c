"""Collects one status line per acceptance criterion and prints them at the end."""

import pytest

_LINES: dict[str, str] = {}


class AcceptanceLog:
    def record(self, key: str, title: str, passed: bool, detail: str) -> bool:
        _LINES[key] = f"{key} {'PASS' if passed else 'FAIL'} {title}: {detail}"
        return passed

    def skip(self, key: str, title: str, reason: str) -> None:
        _LINES[key] = f"{key} SKIP {title}: {reason}"
        pytest.skip(reason)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES):
        terminalreporter.write_line(_LINES[key])
