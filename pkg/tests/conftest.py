import numpy as np
import pytest

from iptwsize.data import Dataset, OutcomeKind
from iptwsize.scenarios import get_scenario


def make_dataset(rng, n=200, p=2, kind="continuous", ps_slope=0.5):
    """Small confounded dataset of the requested outcome kind."""
    x = rng.standard_normal((n, p))
    lin = ps_slope * x.sum(axis=1)
    t = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
    kind = OutcomeKind(kind)
    mean_lin = -0.5 + 0.4 * x[:, 0] + 0.5 * t
    if kind is OutcomeKind.BINARY:
        y = (rng.random(n) < 1 / (1 + np.exp(-mean_lin))).astype(float)
    elif kind is OutcomeKind.COUNT:
        y = rng.poisson(np.exp(mean_lin + 0.5)).astype(float)
    else:
        y = 2.0 + mean_lin + rng.standard_normal(n)
    return Dataset(x, t, y, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def binary_sga():
    return get_scenario("binary_sga")


@pytest.fixture(scope="session")
def binary_mcm():
    return get_scenario("binary_mcm")
