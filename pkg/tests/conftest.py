import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cal():
    from nvrti.charge import default_calibration

    return default_calibration()


@pytest.fixture(scope="session")
def rates100(cal):
    from nvrti.charge import rates_at_power

    return rates_at_power(cal, 100.0)
