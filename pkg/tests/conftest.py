import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record():
    """record(n, passed, detail) stores one summary line for acceptance criterion n."""
    def _record(n: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[n] = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
