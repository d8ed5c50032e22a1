import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ctblue", max_examples=25, deadline=None, derandomize=True)
settings.load_profile("ctblue")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def report(request):
    """Print one acceptance line and keep it for the terminal summary."""
    lines = request.config.stash[_LINES]

    def emit(k: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
