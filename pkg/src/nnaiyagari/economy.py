"""Preferences, technology and factor prices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .markov import MarkovChain, ParameterError, stationary_distribution


@dataclass(frozen=True)
class Preferences:
    beta: float = 0.96
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if self.gamma == 1:
            raise ParameterError("log utility (gamma = 1) is not supported")


@dataclass(frozen=True)
class Technology:
    alpha: float = 0.33
    delta: float = 0.1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.delta <= 1:
            raise ParameterError(f"delta must lie in (0, 1], got {self.delta}")


@dataclass(frozen=True)
class Prices:
    r: float
    w: float

    def __post_init__(self):
        if not self.r > -1:
            raise ParameterError(f"interest rate must exceed -1, got {self.r}")
        if not self.w > 0:
            raise ParameterError(f"wage must be positive, got {self.w}")

    @property
    def gross(self) -> float:
        return 1.0 + self.r


def _positive(c):
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise ParameterError("consumption must be strictly positive")
    return c


def utility(c, prefs: Preferences):
    c = _positive(c)
    g = prefs.gamma
    return c ** (1.0 - g) / (1.0 - g)


def marginal_utility(c, prefs: Preferences):
    return _positive(c) ** (-prefs.gamma)


def prices_from_capital(K: float, L: float, tech: Technology) -> Prices:
    if not (K > 0 and L > 0):
        raise ParameterError(f"capital and labor must be positive, got K={K}, L={L}")
    a = tech.alpha
    r = a * K ** (a - 1.0) * L ** (1.0 - a) - tech.delta
    w = (1.0 - a) * K**a * L ** (-a)
    return Prices(r=r, w=w)


def capital_from_rate(r: float, L: float, tech: Technology) -> float:
    """Capital demand: the K at which the marginal product net of depreciation equals r."""
    if not r > -tech.delta:
        raise ParameterError(f"r must exceed -delta, got {r}")
    return L * ((r + tech.delta) / tech.alpha) ** (1.0 / (tech.alpha - 1.0))


def wage_from_rate(r: float, tech: Technology) -> float:
    a = tech.alpha
    return (1.0 - a) * ((r + tech.delta) / a) ** (a / (a - 1.0))


def labor_supply(chain: MarkovChain) -> float:
    return float(stationary_distribution(chain) @ chain.states)
