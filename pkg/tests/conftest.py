import pytest

_results = pytest.StashKey[list]()


@pytest.fixture
def verdicts(request):
    """List the acceptance tests append (criterion, passed, detail) to."""
    return request.config.stash.setdefault(_results, [])


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_results, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(results):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
