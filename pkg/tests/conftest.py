import pytest

from dcbo import builtin

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def stat():
    return builtin("stat")


@pytest.fixture(scope="session")
def nonstat():
    return builtin("nonstat")


@pytest.fixture
def report(request):
    """``report(n, ok, detail)`` records the status line of criterion ``n``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n: int, ok: bool, detail: str):
        status = "PASS" if ok else "FAIL"
        lines[n] = f"{status} criterion {n}: {detail}"
        print(lines[n])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
