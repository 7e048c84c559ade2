import pytest

_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion as PASS or FAIL, then assert it."""

    def record(label: str, ok: bool, detail: str = ""):
        ok = bool(ok)
        _RESULTS.append((label, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
