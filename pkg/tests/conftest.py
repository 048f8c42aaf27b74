import math

import pytest

from nonholo.models import flat_holonomic, rolling_disc


@pytest.fixture(scope="session")
def disc():
    return rolling_disc()


@pytest.fixture(scope="session")
def level_disc():
    return rolling_disc(tau=0.0)


@pytest.fixture(scope="session")
def flat():
    return flat_holonomic()


@pytest.fixture(scope="session")
def kappa():
    return 1 / math.sqrt(2)
