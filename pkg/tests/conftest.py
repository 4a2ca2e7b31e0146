import random

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci", deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


@pytest.fixture
def store():
    from curator.store import MemoryImageStore
    return MemoryImageStore()
