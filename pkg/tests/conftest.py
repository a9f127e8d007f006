import random

import pytest

from kfmem import kernels


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.backends()[request.param]
    for name in ("link_sorted", "lower_medians", "lerp_f32"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return random.Random(20251016)
