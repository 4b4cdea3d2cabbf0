import numpy as np
import pytest

from fluidex import flows


@pytest.fixture(scope="session")
def cellular():
    return flows.get_flow("cellular")


@pytest.fixture(scope="session")
def shear():
    return flows.get_flow("shear")


@pytest.fixture(scope="session")
def abc():
    return flows.get_flow("abc")


@pytest.fixture(scope="session")
def constant():
    return flows.get_flow("constant")


@pytest.fixture(scope="session")
def bump_shear():
    return flows.get_flow("bump_shear")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
