import numpy as np
import pytest

from wpcnsched import SystemParams
from wpcnsched.channel import generate_instance


@pytest.fixture
def params():
    return SystemParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_instance(n, seed, params=None):
    params = params or SystemParams()
    return generate_instance(n, params, np.random.default_rng(seed))
