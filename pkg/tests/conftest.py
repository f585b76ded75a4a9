import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "dplab",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("dplab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
