import json

import numpy as np
import pytest

from netid.cli import CONFIG_DIR
from netid.network import NetworkModel
from netid.predictor import ModelSet, extract_theta
from netid.simulate import simulate_experiment

_ACCEPTANCE_LINES: list[str] = []


def load_bundled(name):
    with open(CONFIG_DIR / f"{name}.json") as fh:
        cfg = json.load(fh)
    m = NetworkModel.from_spec(cfg["network"])
    ms = ModelSet.from_spec(cfg["modelset"], m)
    return cfg, m, ms, extract_theta(ms, m)


@pytest.fixture(scope="session")
def net3():
    return load_bundled("paper_sec6")


@pytest.fixture(scope="session")
def net3_data(net3):
    _, m, _, _ = net3
    return simulate_experiment(m, 1000, 11)


@pytest.fixture(scope="session")
def static_relaxed():
    return load_bundled("example1")


@pytest.fixture(scope="session")
def static_cls():
    return load_bundled("example2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
