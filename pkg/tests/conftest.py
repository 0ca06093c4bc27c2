import numpy as np
import pytest

from nnaiyagari.economy import Preferences, Prices, Technology, wage_from_rate
from nnaiyagari.markov import ArOneSpec, tauchen_discretize
from nnaiyagari.rational import AssetGrid, solve_vfi, stationary_wealth

# equilibrium rate of the default calibration, frozen from find_equilibrium
R_STAR = 0.032412661355733924


@pytest.fixture(scope="session")
def chain():
    return tauchen_discretize(ArOneSpec())


@pytest.fixture(scope="session")
def prefs():
    return Preferences()


@pytest.fixture(scope="session")
def prices():
    return Prices(R_STAR, wage_from_rate(R_STAR, Technology()))


@pytest.fixture(scope="session")
def grid():
    return AssetGrid.squared(300, 60.0)


@pytest.fixture(scope="session")
def re_policy(prices, chain, grid, prefs):
    return solve_vfi(prices, chain, grid, prefs)


@pytest.fixture(scope="session")
def re_dist(re_policy):
    return stationary_wealth(re_policy)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def equilibrium(chain, grid, prefs):
    import time

    from nnaiyagari.rational import find_equilibrium

    t0 = time.perf_counter()
    eq = find_equilibrium(Technology(), prefs, chain, grid)
    eq.seconds = time.perf_counter() - t0
    return eq
