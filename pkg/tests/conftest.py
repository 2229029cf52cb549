import numpy as np
import pytest

from spaced_select.memory import ModelKind, ModelParams, ReviewEvent

DAY = 86400


@pytest.fixture
def small_params():
    return ModelParams(ModelKind.EXPONENTIAL, 0.3, 0.5, {"a": 0.5, "b": 1.0, "c": 2.0})


def make_events(rows):
    return [ReviewEvent(*r) for r in rows]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
