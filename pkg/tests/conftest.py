import dataclasses

import numpy as np
import pytest

from hdmask.config import preset
from hdmask.testbed import fit_linear, generate_dataset

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion implemented by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _CRITERIA.get(number, (title, "PASS"))[1]
        status = "PASS" if rep.outcome == "passed" and prev == "PASS" else "FAIL"
        _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")


@pytest.fixture(scope="session")
def single_data():
    return generate_dataset(0, mode="single")


@pytest.fixture(scope="session")
def single_model(single_data):
    return fit_linear(single_data)


@pytest.fixture(scope="session")
def dual_data():
    return generate_dataset(0, mode="dual")


@pytest.fixture(scope="session")
def dual_model(dual_data):
    return fit_linear(dual_data)


@pytest.fixture(scope="session")
def desk_cfg():
    return preset("desk")


@pytest.fixture(scope="session")
def quick_cfg(desk_cfg):
    """Desk geometry with short training, for tests that only need plumbing."""
    dm = dataclasses.replace(desk_cfg.dm, epochs=20)
    return dataclasses.replace(desk_cfg, dm=dm, mix_epochs=20)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
