import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uformer.model import UFormerConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    """Small channel ladder with the default geometry, for fast model tests."""
    return UFormerConfig(enc_channels=[4, 8, 8, 8, 8], dec_channels=[8, 8, 8, 4, 1])
