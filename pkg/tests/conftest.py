import pytest

from graspdict.config import TrainConfig
from graspdict.synth import synth_generate

TINY_HIDDEN = (16, 8, 8, 16, 8, 8, 16)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Also run the long training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    return TrainConfig(k=4, hidden=TINY_HIDDEN, gc_widths=(6, 8),
                       batch_size=16, epochs=20, est_epochs=3, lr=1e-3,
                       seeds=(7,), ratio=0.3, test_fraction=0.25)


@pytest.fixture(scope="session")
def synth_records():
    return synth_generate(4, 15, 11)
