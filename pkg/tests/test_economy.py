import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnaiyagari.economy import (
    Preferences, Prices, Technology, capital_from_rate, labor_supply, marginal_utility, prices_from_capital,
    utility, wage_from_rate,
)
from nnaiyagari.markov import ParameterError


def test_crra_values():
    prefs = Preferences()
    assert utility(2.0, prefs) == pytest.approx(-0.5)
    assert marginal_utility(2.0, prefs) == pytest.approx(0.25)


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_utility_rejects_nonpositive(c):
    with pytest.raises(ParameterError):
        utility(c, Preferences())
    with pytest.raises(ParameterError):
        marginal_utility(c, Preferences())


def test_log_utility_rejected():
    with pytest.raises(ParameterError):
        Preferences(gamma=1.0)


@given(st.floats(0.5, 20.0), st.floats(0.5, 2.0))
def test_price_round_trip(K, L):
    tech = Technology()
    p = prices_from_capital(K, L, tech)
    assert capital_from_rate(p.r, L, tech) == pytest.approx(K, rel=1e-10)
    assert wage_from_rate(p.r, tech) == pytest.approx(p.w, rel=1e-10)


def test_factor_shares_exhaust_output():
    tech = Technology()
    K, L = 4.0, 1.1
    p = prices_from_capital(K, L, tech)
    Y = K**tech.alpha * L ** (1 - tech.alpha)
    assert (p.r + tech.delta) * K + p.w * L == pytest.approx(Y, rel=1e-12)


def test_labor_supply_is_stationary_mean(chain):
    from nnaiyagari.markov import stationary_distribution

    assert labor_supply(chain) == pytest.approx(stationary_distribution(chain) @ chain.states)


def test_prices_validation():
    with pytest.raises(ParameterError):
        Prices(-1.5, 1.0)
    with pytest.raises(ParameterError):
        Prices(0.03, 0.0)
    assert Prices(0.03, 1.0).gross == pytest.approx(1.03)
