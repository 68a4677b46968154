import pytest

from stringdispatch.core import CellModelParams, StringState


@pytest.fixture
def params():
    return CellModelParams()


@pytest.fixture
def fresh():
    return StringState(0.5)


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def report(request):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.setdefault(criterion, []).append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            for line in lines[key]:
                terminalreporter.write_line(line)
