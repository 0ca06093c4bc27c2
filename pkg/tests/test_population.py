import numpy as np
import pandas as pd
import pytest

from nnaiyagari.agent import PRESETS, with_overrides
from nnaiyagari.markov import ParameterError
from nnaiyagari.population import (
    PANEL_COLUMNS, Panel, SimulationConfig, counterfactual_re_trajectory, diversion_by_age, parent_replay,
    policy_gap, run_asymptotic, simulate_population, simulate_re_panel, simulate_second_generation,
)
from nnaiyagari.rational import interpolate_policy

SMALL = SimulationConfig(n_agents=40, hp=PRESETS["low"], master_seed=5)


@pytest.fixture(scope="module")
def gen1(chain, re_policy, re_dist, prices, prefs):
    return simulate_population(SMALL, chain, re_policy, re_dist, prices, prefs)


@pytest.fixture(scope="module")
def gen2(gen1, chain, re_policy, prices, prefs):
    cfg = SimulationConfig(40, PRESETS["low"], 5, generation=2)
    return simulate_second_generation(gen1, cfg, chain, re_policy, prices, prefs)


def test_thread_and_chunk_invariance(gen1, chain, re_policy, re_dist, prices, prefs, monkeypatch):
    import nnaiyagari.population as pop

    monkeypatch.setattr(pop, "CHUNK", 7)
    other = simulate_population(SMALL, chain, re_policy, re_dist, prices, prefs, threads=3)
    for name in ("a", "z", "action", "consumption", "mpc", "clip_flag"):
        assert np.array_equal(getattr(gen1.history, name), getattr(other.history, name))
    assert np.array_equal(gen1.history.euler_err, other.history.euler_err, equal_nan=True)
    assert np.array_equal(gen1.a_re, other.a_re)


def test_subset_of_agents_unchanged(gen1, chain, re_policy, re_dist, prices, prefs):
    small = simulate_population(SimulationConfig(10, PRESETS["low"], 5), chain, re_policy, re_dist, prices, prefs)
    assert np.array_equal(small.history.a, gen1.history.a[:10])


def test_budget_identity_all_records(gen1, gen2, chain, prices):
    for panel in (gen1, gen2):
        h = panel.history
        resid = prices.gross * h.a + prices.w * chain.states[h.z] - h.action - h.consumption
        assert np.max(np.abs(resid)) < 1e-10


def test_zero_diversion_in_childhood(gen1):
    mean, sd = diversion_by_age(gen1)
    assert np.all(mean[:21] == 0) and np.all(sd[:21] == 0)
    assert np.any(mean[21:] != 0)


def test_counterfactual_follows_re(gen1, re_policy, chain, prices):
    a_re, c_re = counterfactual_re_trajectory(gen1.history, re_policy, prices, chain, start=20)
    t = 50
    assert np.array_equal(a_re[:, t + 1], interpolate_policy(re_policy, a_re[:, t], gen1.history.z[:, t]))
    assert np.all(c_re > 0)


def test_panel_frame_round_trip(gen1, prices, chain, re_policy):
    df = gen1.to_frame()
    assert list(df.columns) == PANEL_COLUMNS and len(df) == 40 * 100
    back = Panel.from_frame(df, prices, chain, re_policy=re_policy)
    assert np.array_equal(back.history.a, gen1.history.a)
    assert np.array_equal(back.c_re, gen1.c_re)
    with pytest.raises(ParameterError, match="consumption"):
        Panel.from_frame(df.drop(columns="consumption"), prices, chain)


def test_second_generation_replays_parent(gen1, gen2):
    p, c = gen1.history, gen2.history
    assert np.array_equal(c.a[:, :20], p.a[:, 80:])
    assert np.array_equal(c.z[:, :20], p.z[:, 80:])
    assert np.array_equal(c.action[:, :20], p.action[:, 80:])
    assert np.array_equal(c.a[:, 20], p.action[:, -1])  # inherited wealth
    assert np.all((c.a >= 0) & (c.a <= 50))


def test_second_generation_requires_parent(chain, re_policy, prices, prefs):
    with pytest.raises(ParameterError):
        simulate_second_generation(None, SimulationConfig(generation=2), chain, re_policy, prices, prefs)


def test_parent_too_short(gen1):
    short = gen1.select(np.arange(3))
    short.childhood = 90
    with pytest.raises(ParameterError):
        parent_replay(short, 20)


def test_config_validation():
    with pytest.raises(ParameterError):
        SimulationConfig(n_agents=0)
    with pytest.raises(ParameterError):
        SimulationConfig(generation=3)


def test_re_panel(chain, re_policy, re_dist, prices):
    panel = simulate_re_panel(50, 30, 0, chain, re_policy, re_dist, prices)
    h = panel.history
    assert np.array_equal(h.a[:, 1:], h.action[:, :-1])
    assert np.all(panel.adult)
    assert np.array_equal(panel.a_re, h.a)


def test_asymptotic_zero_steps_is_inertial_gap(chain, re_policy, re_dist, prices, prefs):
    hp = with_overrides(PRESETS["asymptotic"], learn_freq=0, life_T=5, childhood=0, inertial_init=True)
    res = run_asymptotic(hp, chain, re_policy, re_dist, prices, prefs, seed=0, n_euler_states=5)
    a = res.a_eval
    inertial = np.max(np.abs(a - interpolate_policy(re_policy, a, np.full(a.size, res.z_index))))
    assert np.all(res.gaps == inertial)


def test_policy_gap_of_zero_net_is_inertial_gap(chain, re_policy, prices):
    from nnaiyagari.net import zeros_like_net

    hp = PRESETS["asymptotic"]
    net = zeros_like_net(hp.layer_sizes)
    a = np.array([re_policy.grid.points[150]])
    z = (chain.n - 1) // 2
    # an inertial rule matches RE exactly only where RE keeps wealth unchanged
    gap = policy_gap(net, hp, re_policy, prices, a, z)[0]
    assert gap == pytest.approx(abs(a[0] - interpolate_policy(re_policy, a[0], z)), abs=1e-15)
