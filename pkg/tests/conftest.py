import pytest

SEED = 20260809


@pytest.fixture(scope="session")
def seed():
    return SEED
