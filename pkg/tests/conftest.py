import socket

import numpy as np
import pytest

from entqkd.config import Config
from entqkd.pipeline import simulate


@pytest.fixture(scope="session")
def default_config():
    return Config()


@pytest.fixture(scope="session")
def short_run():
    """60 simulated seconds, about five blocks."""
    return simulate(Config(), duration_s=60, seed=11, render=False)


@pytest.fixture(scope="session")
def corpus_run():
    """The full-length run the pipeline ratios are checked against."""
    import time

    t0 = time.perf_counter()
    res = simulate(Config(), duration_s=1080, seed=1, render=False)
    res.wall_seconds = time.perf_counter() - t0
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
