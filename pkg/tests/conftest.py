import numpy as np
import pytest

from telempose import modem
from telempose.grid import GridConfig, one_pilot_config, two_pilot_config


@pytest.fixture(scope="session")
def qpsk():
    return modem.qam(4)


@pytest.fixture(scope="session")
def cfg_2p() -> GridConfig:
    return two_pilot_config()


@pytest.fixture(scope="session")
def cfg_1p() -> GridConfig:
    return one_pilot_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
