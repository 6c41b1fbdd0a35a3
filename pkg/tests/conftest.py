"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

import modete as m


@pytest.fixture(scope="session")
def dgps():
    return m.builtin_dgps()


@pytest.fixture(scope="session")
def lognormal_plain(dgps):
    return dgps["lognormal-plain"]


@pytest.fixture(scope="session")
def lognormal_selection(dgps):
    return dgps["lognormal-selection"]


@pytest.fixture(scope="session")
def normal_selection(dgps):
    return dgps["normal-selection"]


def central_difference(f, x, eps):
    return (f(x + eps) - f(x - eps)) / (2.0 * eps)


def small_sample(n=40, seed=0, dim=1):
    """A quick well-behaved two-arm sample for unit tests."""
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1.0, n)
    d = (rng.random(n) < 0.5).astype(int)
    if d.sum() == 0:
        d[0] = 1
    if d.sum() == n:
        d[0] = 0
    x = rng.random((n, dim))
    return m.Sample(y, d, x)
