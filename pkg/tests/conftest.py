import json
import os
from pathlib import Path

import numpy as np
import pytest

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DECOUPLER_EXTENDED") == "1":
        return
    skip = pytest.mark.skip(reason="extended experiment; set DECOUPLER_EXTENDED=1 to run")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def oracles():
    return ORACLES
