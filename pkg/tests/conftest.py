import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crossview import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def f64():
    with ad.float64_mode():
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)
