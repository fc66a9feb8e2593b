import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, ok, detail)``."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        _CRITERIA.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
