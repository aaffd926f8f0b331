import numpy as np
import pandas as pd
import pytest

from gridcast.series_store import SeriesCollection

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_collection(series, start="2024-01-01T00:00:00Z", exogenous=None, hierarchy=None):
    """Small collection helper; adds a noise temperature channel when none is given."""
    n = max(len(v) for v in series.values())
    if exogenous is None:
        exogenous = {"temperature": np.random.default_rng(0).normal(size=n)}
    return SeriesCollection(
        series={k: np.asarray(v, dtype=float) for k, v in series.items()},
        start=pd.Timestamp(start),
        exogenous={k: np.asarray(v, dtype=float) for k, v in exogenous.items()},
        hierarchy=dict(hierarchy or {}),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
