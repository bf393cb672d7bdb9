import pytest

RESULTS: dict[int, str] = {}


@pytest.fixture
def record():
    def _record(criterion: int, passed: bool, detail: str):
        RESULTS[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(RESULTS[criterion])
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k])
