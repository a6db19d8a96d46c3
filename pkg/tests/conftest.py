import numpy as np
import pytest
from hypothesis import settings

from truthful_ssa.core import make_instance

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_instance():
    return make_instance(11, n=4, d=4, T=600)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
