import numpy as np
import pytest

from afguide._core import available_backends, get_backend, set_backend


@pytest.fixture(params=available_backends())
def kernel_backend(request):
    """Run the decorated test once per available kernel backend."""
    prev = get_backend()
    set_backend(request.param)
    yield request.param
    set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
