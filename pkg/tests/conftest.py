import pytest

# criterion number -> printed verdict line, filled in by test_acceptance
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def record():
    def _record(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line, flush=True)
        return passed

    return _record
