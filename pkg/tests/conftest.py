import numpy as np
import pytest


def random_sym(rng, r, scale=1.0):
    m = rng.standard_normal((r, r)) * scale
    return 0.5 * (m + m.T)


def random_psd(rng, r, scale=1.0):
    g = rng.standard_normal((r, r)) * scale
    return g @ g.T / r


def random_spd(rng, r, scale=1.0, ridge=0.1):
    return random_psd(rng, r, scale) + ridge * np.eye(r)


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
