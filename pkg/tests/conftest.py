import warnings

import pytest


@pytest.fixture(autouse=True)
def _quiet_expected_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="PK data covers a single dose level")
        warnings.filterwarnings("ignore", message="only .* draws include indicators")
        yield
