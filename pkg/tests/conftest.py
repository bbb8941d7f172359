import pytest

from progdarts import tensor as T


@pytest.fixture(autouse=True)
def clean_tape():
    # forward passes without a backward leave nodes on the thread's tape
    T.get_tape().clear()
    yield
