import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


class CriterionReporter:
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def __call__(self, name: str, passed: bool, detail: str) -> bool:
        _CRITERIA.append((name, bool(passed), detail))
        return bool(passed)


@pytest.fixture(scope="session")
def criterion():
    return CriterionReporter()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
