import numpy as np
import pytest

from rdpdhg.equations import MODEL_KINDS, build_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=MODEL_KINDS)
def small_model(request):
    return build_model(request.param, n_x=8)
