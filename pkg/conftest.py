"""Shared fixtures: seeded generators and small point clouds."""
import numpy as np
import pytest

from measures import make_measure


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def symmetric_pair():
    """1/2 delta_(1,0) + 1/2 delta_(-1,0)."""
    return make_measure([[1.0, 0.0], [-1.0, 0.0]])


@pytest.fixture
def cloud_factory():
    def make(seed, n, dim=2, radius=1.0, uniform=True):
        gen = np.random.default_rng(seed)
        points = gen.uniform(-radius, radius, size=(n, dim))
        weights = None if uniform else gen.uniform(0.1, 1.0, size=n)
        return make_measure(points, weights)
    return make
