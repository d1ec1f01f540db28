import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nonlocal_ext.extend import build_geometry
from nonlocal_ext.geometry import make_builtin_domain
from nonlocal_ext.seminorm import SeminormGeometry, default_window

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def interval():
    return make_builtin_domain("ball", d=1)


@pytest.fixture(scope="session")
def disc():
    return make_builtin_domain("ball", d=2)


@pytest.fixture(scope="session")
def interval_geom(interval):
    return build_geometry(interval, default_window(interval), 12)


@pytest.fixture(scope="session")
def disc_geom(disc):
    return build_geometry(disc, default_window(disc), 8)


@pytest.fixture(scope="session")
def interval_sgeom(interval):
    return SeminormGeometry(interval, default_window(interval), 14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
