import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def exp_uniform_export():
    return json.loads((DATA / "exp_uniform.json").read_text())


@pytest.fixture(scope="session")
def log_uniform_export():
    return json.loads((DATA / "log_uniform.json").read_text())


@pytest.fixture(scope="session")
def sshaped_export():
    return json.loads((DATA / "sshaped_lognormal.json").read_text())
