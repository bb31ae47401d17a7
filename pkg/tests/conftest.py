import numpy as np
import pytest

from core_types import five_platform, four_platform, six_platform
from downwash import five_platform_model, four_platform_model, six_platform_model


@pytest.fixture
def four():
    return four_platform()


@pytest.fixture
def five():
    return five_platform()


@pytest.fixture
def six():
    return six_platform()


@pytest.fixture
def four_model(four):
    return four_platform_model(four)


@pytest.fixture
def five_model(five):
    return five_platform_model(five)


@pytest.fixture
def six_model(six):
    return six_platform_model(six)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
