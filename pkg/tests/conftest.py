from __future__ import annotations

import pytest

_CRITERIA: list[str] = []


class CriterionLog:
    def record(self, number: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA.append(line)
        print(line)


@pytest.fixture(scope="session")
def criteria() -> CriterionLog:
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
