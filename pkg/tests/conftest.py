import pytest

_CRITERIA = []


@pytest.fixture(scope="session")
def criterion_log():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(number, title, passed, details):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {title}: {details}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
