import pytest

from avw2 import autodiff as ad


@pytest.fixture(autouse=True)
def _fresh_tape():
    ad.reset_tape()
    yield
    ad.reset_tape()
