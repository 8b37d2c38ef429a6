import json

import pytest

from fpsentry.catalog import load_catalog, loads_profile
from fpsentry.psl import load_rules

from support.profiles import PROFILE_DATA

__all__ = ["PROFILE_DATA"]


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def profile():
    return loads_profile(json.dumps(PROFILE_DATA))


@pytest.fixture(scope="session")
def rules():
    return load_rules()


@pytest.fixture()
def profile_data():
    return dict(PROFILE_DATA)
