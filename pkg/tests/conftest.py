import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the long acceptance checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reconstruction or Monte-Carlo check")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --runslow")

    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Seeded generator shared by the randomised tests."""
    return np.random.default_rng(20240611)
