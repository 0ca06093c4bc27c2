import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnaiyagari.economy import Preferences, Prices, Technology, capital_from_rate, prices_from_capital
from nnaiyagari.markov import ArOneSpec, NumericalError, ParameterError, tauchen_discretize
from nnaiyagari.rational import (
    AssetGrid, RationalPolicy, capital_supply, euler_error, euler_residuals, find_equilibrium,
    interpolate_policy, solve_vfi, stationary_wealth, transition_operator,
)


def _interior(policy, residuals):
    return np.isfinite(residuals) & (policy.savings < policy.grid.top - 1e-8)


def test_grid_invariants(grid):
    assert grid.points[0] == 0.0 and grid.top == 60.0 and grid.n_points == 300
    assert np.all(np.diff(grid.points) > 0)
    with pytest.raises(ParameterError):
        AssetGrid(np.array([0.0, 1.0, 1.0]))


def test_policy_invariants(re_policy):
    s, c = re_policy.savings, re_policy.consumption()
    assert np.all(s >= 0) and np.all(s <= 60)
    assert np.all(c > 0)
    assert np.min(np.diff(s, axis=0)) >= -1e-12
    assert np.min(np.diff(c, axis=0)) >= -1e-12


def test_euler_residuals_small(re_policy, prefs):
    res = euler_residuals(re_policy, prefs)
    assert np.max(np.abs(res[_interior(re_policy, res)])) < 1e-2


def test_euler_residuals_shrink_with_grid(prices, chain, prefs, re_policy):
    coarse = solve_vfi(prices, chain, AssetGrid.squared(150, 60.0), prefs)
    rc, rf = euler_residuals(coarse, prefs), euler_residuals(re_policy, prefs)
    assert np.max(np.abs(rf[_interior(re_policy, rf)])) <= 0.5 * np.max(np.abs(rc[_interior(coarse, rc)]))


def test_value_concave(re_policy):
    slope = np.diff(re_policy.value, axis=0) / np.diff(re_policy.grid.points)[:, None]
    assert np.max(np.diff(slope, axis=0)) <= 1e-8


@pytest.mark.filterwarnings("ignore:beta")
def test_certainty_case_keeps_wealth():
    prefs = Preferences()
    chain = tauchen_discretize(ArOneSpec(n_states=1))
    prices = Prices(1 / prefs.beta - 1, 1.0)
    grid = AssetGrid.squared(120, 20.0)
    pol = solve_vfi(prices, chain, grid, prefs, check_top=False)
    a = grid.points
    interior = (a > 1.0) & (a < 15.0)
    idx = np.flatnonzero(interior)
    cell = np.maximum(a[idx + 1] - a[idx], a[idx] - a[idx - 1])
    assert np.all(np.abs(pol.savings[idx, 0] - a[idx]) <= cell)


@pytest.mark.filterwarnings("ignore:beta")
def test_top_of_grid_error(prefs):
    # beta(1+r) > 1 without risk: wealth grows without bound
    chain = tauchen_discretize(ArOneSpec(n_states=1))
    with pytest.raises(NumericalError, match="top of the asset grid"):
        solve_vfi(Prices(0.08, 1.0), chain, AssetGrid.squared(60, 5.0), prefs)


def _policy(grid, chain, prices, savings):
    return RationalPolicy(savings=savings, value=np.zeros_like(savings), grid=grid, chain=chain, prices=prices)


def test_inertial_policy_absorbing(grid, chain, prices):
    pol = _policy(grid, chain, prices, np.repeat(grid.points[:, None], chain.n, axis=1))
    m0 = np.zeros((grid.n_points, chain.n))
    m0[100, :] = 1.0 / chain.n
    from nnaiyagari.markov import stationary_distribution

    m0[100, :] = stationary_distribution(chain)
    d = stationary_wealth(pol, initial=m0)
    assert d.asset_marginal()[100] == pytest.approx(1.0, abs=1e-12)


def test_save_floor_policy(grid, chain, prices):
    pol = _policy(grid, chain, prices, np.zeros((grid.n_points, chain.n)))
    d = stationary_wealth(pol)
    assert d.asset_marginal()[0] == pytest.approx(1.0, abs=1e-12)


def test_stationary_fixed_point(re_policy, re_dist):
    m = re_dist.mass.ravel()
    assert abs(m.sum() - 1) < 1e-10 and np.all(m >= 0)
    m1 = transition_operator(re_policy).T @ m
    assert 0.5 * np.abs(m1 - m).sum() < 1e-10


def test_capital_consistent_with_rate(re_dist, prices, chain):
    from nnaiyagari.economy import labor_supply

    K_demand = capital_from_rate(prices.r, labor_supply(chain), Technology())
    assert re_dist.capital() == pytest.approx(K_demand, rel=0.01)


def test_equilibrium_rate_and_consistency(equilibrium):
    assert abs(equilibrium.prices.r - 0.0329) < 0.0015
    p = prices_from_capital(equilibrium.distribution.capital(), equilibrium.labor, Technology())
    assert p.w == pytest.approx(equilibrium.prices.w, rel=1e-6)


def test_excess_supply_monotone(chain, prefs):
    grid = AssetGrid.squared(150, 60.0)
    tech = Technology()
    from nnaiyagari.economy import labor_supply

    L = labor_supply(chain)
    rates = np.linspace(0.0, 0.04, 5)
    excess = [capital_supply(r, tech, prefs, chain, grid)[0] - capital_from_rate(r, L, tech) for r in rates]
    assert np.all(np.diff(excess) > 0)  # supply rises and demand falls in r: K_s - K_d increasing
    assert excess[0] < 0 < excess[-1]


def test_bad_bracket(chain, prefs):
    with pytest.raises(ParameterError):
        find_equilibrium(Technology(), prefs, chain, AssetGrid.squared(100, 60.0), bracket=(0.0, 0.01))


def test_euler_error_closed_forms(prefs):
    p = Prices(1 / prefs.beta - 1, 1.0)
    assert euler_error(1.3, 1.3, p, prefs) == pytest.approx(0.0, abs=1e-15)
    assert euler_error(1.0, 1.0, Prices(0.0329, 1.0), prefs) == pytest.approx(-0.008416, abs=1e-12)
    p = Prices(0.9916 / prefs.beta - 1, 1.0)
    assert euler_error(1.0, 2.0, p, prefs) == pytest.approx(0.9916 / 4 - 1, abs=1e-12)
    with pytest.raises(ParameterError):
        euler_error(0.0, 1.0, p, prefs)


def test_interpolation_nodes_and_midpoints(re_policy):
    g = re_policy.grid.points
    z = 7
    assert np.array_equal(interpolate_policy(re_policy, g, np.full(g.size, z)), re_policy.savings[:, z])
    mid = 0.5 * (g[:-1] + g[1:])
    expect = 0.5 * (re_policy.savings[:-1, z] + re_policy.savings[1:, z])
    assert np.allclose(interpolate_policy(re_policy, mid, np.full(mid.size, z)), expect, rtol=0, atol=1e-12)


def test_interpolation_monotone_scan(re_policy):
    probes = np.sort(np.random.default_rng(0).uniform(0, 60, 1000))
    for z in range(re_policy.chain.n):
        assert np.all(np.diff(interpolate_policy(re_policy, probes, np.full(1000, z))) >= -1e-12)


def test_interpolation_clamps_and_counts(re_policy):
    before = re_policy.clamped
    out = interpolate_policy(re_policy, np.array([-1.0, 70.0]), np.array([0, 0]))
    assert re_policy.clamped == before + 2
    assert out[0] == re_policy.savings[0, 0] and out[1] == re_policy.savings[-1, 0]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 60.0), st.integers(0, 19))
def test_interpolated_consumption_positive(re_policy, a, z):
    s = interpolate_policy(re_policy, a, z)
    p = re_policy.prices
    assert 0.0 <= s <= 60.0
    assert p.gross * a + p.w * re_policy.chain.states[z] - s > 0
