"""Discretized AR(1) productivity process."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm


class ParameterError(ValueError):
    """Raised for parameter values outside their admissible domain."""


class NumericalError(ArithmeticError):
    """Raised when an iterative routine fails to converge."""


@dataclass(frozen=True)
class ArOneSpec:
    rho: float = 0.6
    sigma: float = 0.3
    n_states: int = 20
    width: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ParameterError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if int(self.n_states) != self.n_states or self.n_states < 1:
            raise ParameterError(f"n_states must be a positive integer, got {self.n_states}")
        if not self.width > 0:
            raise ParameterError(f"width must be positive, got {self.width}")


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Productivity levels ``states`` and row-stochastic ``transition`` matrix."""

    states: np.ndarray
    transition: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        P = np.asarray(self.transition, dtype=float)
        n = states.size
        if P.shape != (n, n):
            raise ParameterError(f"transition shape {P.shape} does not match {n} states")
        if np.any(P < 0) or np.any(P > 1):
            raise ParameterError("transition entries must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ParameterError("transition rows must sum to one")
        if np.any(states <= 0) or np.any(np.diff(states) <= 0):
            raise ParameterError("states must be positive and strictly increasing")
        states.setflags(write=False)
        P.setflags(write=False)
        cdf = np.cumsum(P, axis=1)
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "cdf", cdf)

    @property
    def n(self) -> int:
        return self.states.size


def tauchen_discretize(spec: ArOneSpec) -> MarkovChain:
    """Tauchen's method for ``log z' = rho log z + sigma eps``."""
    n = spec.n_states
    if n == 1:
        return MarkovChain(np.array([1.0]), np.array([[1.0]]))
    std_y = spec.sigma / np.sqrt(1.0 - spec.rho**2)
    y = np.linspace(-spec.width * std_y, spec.width * std_y, n)
    half = 0.5 * (y[1] - y[0])
    mean = spec.rho * y[:, None]
    upper = norm.cdf((y[None, 1:] - mean + half) / spec.sigma)
    lower = norm.cdf((y[None, :-1] - mean - half) / spec.sigma)
    P = np.empty((n, n))
    P[:, 0] = upper[:, 0]
    P[:, -1] = 1.0 - lower[:, -1]
    P[:, 1:-1] = upper[:, 1:] - lower[:, :-1]
    # cdf differences can round a hair below zero in the far tails
    P = np.clip(P, 0.0, 1.0)
    P /= P.sum(axis=1, keepdims=True)
    return MarkovChain(np.exp(y), P)


def stationary_distribution(chain: MarkovChain, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Invariant distribution by power iteration on the transpose map."""
    P = chain.transition
    n = chain.n
    if n == 1:
        return np.ones(1)
    if np.any(np.abs(np.diag(P) - 1.0) < 1e-15):
        raise NumericalError("transition matrix is reducible (absorbing state)")
    # reachability check: every state must reach every other
    reach = (P > 0).astype(np.int64) + np.eye(n, dtype=np.int64)
    for _ in range(int(np.ceil(np.log2(n))) + 1):
        reach = np.minimum(reach @ reach, 1)
    if not np.all(reach > 0):
        raise NumericalError("transition matrix is reducible")
    p = np.full(n, 1.0 / n)
    resid = np.inf
    for _ in range(max_iter):
        p_new = p @ P
        p_new /= p_new.sum()
        resid = np.max(np.abs(p_new - p))
        p = p_new
        if resid < tol:
            return p
    raise NumericalError(f"stationary distribution did not converge, residual {resid:.3e}")


def sample_next(chain: MarkovChain, current: int, rng: np.random.Generator) -> int:
    if not 0 <= current < chain.n:
        raise IndexError(f"state index {current} outside [0, {chain.n})")
    return int(next_state(chain, np.asarray(current), rng.random()))


def next_state(chain: MarkovChain, current, u):
    """Vectorized inverse-CDF draw of the successor of ``current`` given uniforms ``u``."""
    rows = chain.cdf[current]
    idx = (np.asarray(u)[..., None] >= rows).sum(axis=-1)
    return np.minimum(idx, chain.n - 1)


def draw_from(p: np.ndarray, u):
    """Inverse-CDF draw from a probability vector."""
    c = np.cumsum(p)
    c[-1] = 1.0
    return np.minimum(np.searchsorted(c, u, side="right"), p.size - 1)
