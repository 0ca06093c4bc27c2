import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnaiyagari.markov import (
    ArOneSpec, MarkovChain, NumericalError, ParameterError, draw_from, next_state, sample_next,
    stationary_distribution, tauchen_discretize,
)

specs = st.builds(
    ArOneSpec,
    rho=st.floats(0.0, 0.95),
    sigma=st.floats(0.01, 1.0),
    n_states=st.integers(1, 30),
    width=st.floats(0.5, 4.0),
)


def test_degenerate_chain():
    ch = tauchen_discretize(ArOneSpec(n_states=1))
    assert ch.states.tolist() == [1.0]
    assert ch.transition.tolist() == [[1.0]]


def test_zero_persistence_rows_identical():
    ch = tauchen_discretize(ArOneSpec(rho=0.0, sigma=0.3, n_states=2))
    assert np.max(np.abs(ch.transition[0] - ch.transition[1])) < 1e-12


def test_grid_centered_and_spaced(chain):
    logz = np.log(chain.states)
    half = 3 * 0.3 / np.sqrt(1 - 0.6**2)
    assert logz[0] == pytest.approx(-half, abs=1e-12)
    assert logz[-1] == pytest.approx(half, abs=1e-12)
    assert np.allclose(np.diff(logz), np.diff(logz)[0], atol=1e-12)


def test_paper_chain_rows_and_autocorrelation(chain):
    assert np.max(np.abs(chain.transition.sum(axis=1) - 1)) < 1e-12
    # oracle: simulate the chain for 1e6 steps
    rng = np.random.default_rng(7)
    n = 1_000_000
    u = rng.random(n)
    z = np.empty(n, dtype=np.int64)
    z[0] = chain.n // 2
    cdf = np.cumsum(chain.transition, axis=1)
    for t in range(1, n):
        z[t] = min(np.searchsorted(cdf[z[t - 1]], u[t], side="right"), chain.n - 1)
    x = np.log(chain.states[z])
    ac = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(ac - 0.6) < 0.05


@pytest.mark.parametrize("kw", [dict(rho=1.0), dict(rho=-0.1), dict(sigma=0.0), dict(n_states=0), dict(width=0.0)])
def test_invalid_spec(kw):
    with pytest.raises(ParameterError):
        tauchen_discretize(ArOneSpec(**kw))


@settings(max_examples=60, deadline=None)
@given(specs)
def test_row_stochastic_property(spec):
    ch = tauchen_discretize(spec)
    P = ch.transition
    assert np.all((P >= 0) & (P <= 1))
    assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-12
    assert np.all(np.diff(ch.states) > 0)


@settings(max_examples=30, deadline=None)
@given(st.builds(ArOneSpec, rho=st.floats(0.0, 0.9), sigma=st.floats(0.05, 0.5), n_states=st.integers(2, 20)))
def test_stationary_fixed_point_property(spec):
    ch = tauchen_discretize(spec)
    p = stationary_distribution(ch)
    assert abs(p.sum() - 1) < 1e-10
    assert np.max(np.abs(p @ ch.transition - p)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.0), st.floats(0.05, 1.0), st.integers(2, 12))
def test_zero_rho_identical_rows_property(rho, sigma, n):
    P = tauchen_discretize(ArOneSpec(rho, sigma, n)).transition
    assert np.max(np.abs(P - P[0])) < 1e-12


def test_stationary_symmetric():
    ch = MarkovChain(np.array([1.0, 2.0]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert np.allclose(stationary_distribution(ch), [0.5, 0.5])


def test_stationary_reducible_raises():
    ch = MarkovChain(np.array([1.0, 2.0, 3.0]), np.eye(3))
    with pytest.raises(NumericalError):
        stationary_distribution(ch)


def test_stationary_paper_chain(chain):
    p = stationary_distribution(chain)
    assert np.max(np.abs(p @ chain.transition - p)) < 1e-10


def test_sample_next_degenerate(rng):
    ch = MarkovChain(np.array([1.0, 2.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert all(sample_next(ch, 0, rng) == 1 for _ in range(100))
    ch = MarkovChain(np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert all(sample_next(ch, 0, rng) == 0 for _ in range(100))


def test_sample_next_frequency():
    ch = MarkovChain(np.array([1.0, 2.0]), np.array([[0.3, 0.7], [0.5, 0.5]]))
    u = np.random.default_rng(3).random(1_000_000)
    draws = next_state(ch, np.zeros(u.size, dtype=np.int64), u)
    assert abs(draws.mean() - 0.7) < 0.002


def test_sample_next_out_of_range(chain, rng):
    with pytest.raises(IndexError):
        sample_next(chain, chain.n, rng)
    with pytest.raises(IndexError):
        sample_next(chain, -1, rng)


def test_sample_next_deterministic(chain):
    a = [sample_next(chain, 5, np.random.default_rng(1)) for _ in range(3)]
    assert len(set(a)) == 1


def test_draw_from_inverse_cdf():
    p = np.array([0.2, 0.0, 0.8])
    assert draw_from(p, np.array([0.0, 0.19, 0.2, 0.99])).tolist() == [0, 0, 2, 2]
