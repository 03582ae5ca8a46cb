import numpy as np
import pytest

from craft.data import MultivariateSeries
from craft.graph import build_graph
from craft.memory import Memory
from craft.spectral import build_knowledge_base


def periodic_series(periods, T, noise=0.1, seed=0, start_index=0):
    """One sinusoid per channel with random phase and amplitude, plus white noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    cols = []
    for p in periods:
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.8, 1.2)
        cols.append(amp * np.sin(2 * np.pi * t / p + phase))
    values = np.stack(cols, axis=1) + noise * rng.standard_normal((T, len(periods)))
    names = tuple(f"ch{i}" for i in range(len(periods)))
    return MultivariateSeries(values, names, start_index)


def random_series(T, C, seed=0):
    rng = np.random.default_rng(seed)
    return MultivariateSeries(rng.standard_normal((T, C)), tuple(f"c{i}" for i in range(C)))


def make_kb(series, lookback, horizon, m, f):
    memory = Memory.from_series(series, lookback, horizon)
    return build_knowledge_base(memory, build_graph(memory, m), f)


def write_csv(path, series):
    with open(path, "w") as fh:
        fh.write("date," + ",".join(series.channel_names) + "\n")
        for i, row in enumerate(series.values):
            fh.write(f"2020-01-01 {i:05d}," + ",".join(repr(float(v)) for v in row) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary: one PASS/FAIL line per criterion --------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): exit criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        prev = _ACCEPTANCE.get(n, (title, "PASS"))[1]
        if prev == "FAIL" or (prev == "SKIP" and status == "PASS"):
            status = prev
        _ACCEPTANCE[n] = (title, status)
    elif rep.failed:
        _ACCEPTANCE[n] = (title, "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {status:4s} {title}")
