import pytest

_VERDICTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still fails through its own assert."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        _VERDICTS.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
