import contextlib

import pytest

from xgyrosim import kernels
from xgyrosim.grid import Dims, SimParams


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def sim_params():
    def make(dims=(8, 4, 2), eps=0.05, cseed=3, drive=1.0, iseed=5, dt=0.05):
        return SimParams(Dims(*dims), eps, cseed, drive, iseed, dt)

    return make


_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome for the end-of-run summary.

    Usage: ``with criterion(3, "title") as note: ...``; ``note(text)`` adds
    detail. The line reads PASS only if the block exits without an exception.
    """
    @contextlib.contextmanager
    def record(number, title):
        details = []
        try:
            yield details.append
        except BaseException:
            _CRITERIA[number] = (title, False, "; ".join(details))
            raise
        _CRITERIA[number] = (title, True, "; ".join(details))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
