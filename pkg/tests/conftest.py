import numpy as np
import pytest
from hypothesis import settings

from covara.expr import half_complex_square
from covara.sampling import SamplingSchedule

settings.register_profile("covara", deadline=None, max_examples=40)
settings.load_profile("covara")


@pytest.fixture
def square_map():
    """z -> z^2 / 2 written on R^2."""
    return half_complex_square()


@pytest.fixture
def quick_schedule():
    return SamplingSchedule.ladder(levels=6, samples_per_shell=128)


def rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (number, summary); the test outcome decides PASS/FAIL."""
    info = {}

    def record(number, summary):
        info.update(number=number, summary=summary)

    yield record
    rep = getattr(request.node, "rep_call", None)
    if info:
        status = "PASS" if rep is not None and rep.passed else "FAIL"
        ACCEPTANCE_LINES.append((info["number"], f"criterion {info['number']}: {status}  {info['summary']}"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
