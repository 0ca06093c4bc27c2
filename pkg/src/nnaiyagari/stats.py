"""Distributional, behavioural, mobility and welfare statistics of simulated panels."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .economy import Preferences, Prices, utility
from .markov import MarkovChain, ParameterError
from .net import Mlp, PolicyParams, clip_action, forward
from .rational import RationalPolicy, WealthDistribution, interpolate_policy

INCOME_GAP = 10
WEALTH_GAP = 18
ZERO_WEALTH = 1e-6  # interpolation leaves dust below this; treated as no savings


class StatsError(ParameterError):
    """Raised when a statistic is undefined for its input."""


# --- inequality -------------------------------------------------------------

def gini(values, weights=None) -> float:
    """Mean-absolute-difference Gini, computed in sorted O(n log n) form."""
    x = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if x.size == 0 or np.any(x < 0):
        raise StatsError("gini needs a nonempty nonnegative vector")
    W = w.sum()
    mean = (w @ x) / W
    if not mean > 0:
        raise StatsError("gini undefined when all values are zero")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    C = np.cumsum(w)
    C_prev = C - w
    total = 2.0 * np.sum(w * x * (C_prev - (W - C)))
    return float(total / (2.0 * W * W * mean))


def gini_bruteforce(values) -> float:
    x = np.asarray(values, dtype=float)
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2 * x.size**2 * x.mean()))


def top_shares(values, fractions=(0.01, 0.05, 0.20), weights=None) -> dict:
    """Share of the total held by the top ``q`` fraction of holders, fractional unit at the boundary."""
    x = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if x.size == 0:
        raise StatsError("top shares of an empty vector")
    total = w @ x
    if not total > 0:
        raise StatsError("top shares need a positive total")
    order = np.argsort(-x, kind="stable")
    x, w = x[order], w[order]
    W = w.sum()
    cum_w = np.cumsum(w)
    cum_x = np.cumsum(w * x)
    out = {}
    for q in fractions:
        target = q * W
        i = int(np.searchsorted(cum_w, target, side="left"))
        i = min(i, x.size - 1)
        before_w = cum_w[i] - w[i]
        before_x = cum_x[i] - w[i] * x[i]
        out[q] = float((before_x + (target - before_w) * x[i]) / total)
    return out


# --- hand-to-mouth ----------------------------------------------------------

def h2m_flag(a, z, prices: Prices):
    """Wealth below two months of labor income."""
    return np.asarray(a) < prices.w * np.asarray(z) / 6.0


def _adult_flags(panel):
    flags = h2m_flag(panel.history.a, panel.z_value, panel.prices)
    return flags, np.asarray(panel.adult)


def h2m_frequency(panel) -> float:
    flags, adult = _adult_flags(panel)
    if not adult.any():
        raise StatsError("panel has no adult records")
    return float(flags[adult].mean())


def h2m_persistence(panel, lag: int = 2) -> float:
    """P(H2M at t+lag | H2M at t) over adult record pairs of the same agent."""
    flags, adult = _adult_flags(panel)
    both = adult[:, :-lag] & adult[:, lag:]
    cond = flags[:, :-lag] & both
    if not cond.any():
        raise StatsError("no hand-to-mouth adult records to condition on")
    return float(flags[:, lag:][cond].mean())


def h2m_frequency_re(dist: WealthDistribution, chain: MarkovChain, prices: Prices) -> float:
    flags = h2m_flag(dist.grid.points[:, None], chain.states[None, :], prices)
    return float(dist.mass[flags].sum())


# --- marginal propensity to consume ----------------------------------------

def mpc_of_policy(evaluate, a, z, prices: Prices, h: float = 1e-3, a_floor: float = 0.0):
    """1 - (1/(1+r)) dpi/da by central differences; returns (mpc, one_sided flag)."""
    a = np.asarray(a, dtype=float)
    one_sided = a - h < a_floor
    lo = np.where(one_sided, a, a - h)
    hi = a + h
    d = (evaluate(hi, z) - evaluate(lo, z)) / (hi - lo)
    return 1.0 - d / prices.gross, one_sided


def average_mpc(panel) -> float:
    m = panel.history.mpc[np.asarray(panel.adult)]
    return float(np.mean(m))


def average_mpc_re(policy: RationalPolicy, dist: WealthDistribution) -> float:
    a = np.broadcast_to(policy.grid.points[:, None], dist.mass.shape)
    z = np.broadcast_to(np.arange(dist.mass.shape[1])[None, :], dist.mass.shape)
    mpc, _ = mpc_of_policy(lambda q, zz: interpolate_policy(policy, np.minimum(q, policy.grid.top), zz),
                           a, z, policy.prices)
    return float((dist.mass * mpc).sum())


def decile_groups(values, n_groups: int = 10):
    """Equal-count groups by ordinal rank (ties split by position)."""
    v = np.asarray(values).ravel()
    order = np.argsort(v, kind="stable")
    g = np.empty(v.size, dtype=np.int64)
    g[order] = (np.arange(v.size) * n_groups) // v.size
    return g


def mpc_by_wealth(panel, n_groups: int = 10):
    adult = np.asarray(panel.adult)
    a = panel.history.a[adult]
    m = panel.history.mpc[adult]
    g = decile_groups(a, n_groups)
    return [(float(a[g == k].mean()), float(m[g == k].mean())) for k in range(n_groups) if np.any(g == k)]


# --- consumption sensitivity -----------------------------------------------

def _ols_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    var = xc @ xc
    if not var > 1e-300 * max(1, x.size):
        raise StatsError("degenerate regressor variance")
    return float(xc @ (y - y.mean()) / var)


def _sensitivity_arrays(panel):
    c = panel.history.consumption
    y = panel.income
    adult = np.asarray(panel.adult)
    ok = adult[:, :-1] & adult[:, 1:] & (c[:, :-1] > 0) & (c[:, 1:] > 0) & (y[:, :-1] > 0)
    dlogc = np.log(c[:, 1:]) - np.log(c[:, :-1])
    logy = np.log(np.where(y[:, :-1] > 0, y[:, :-1], 1.0))
    return dlogc[ok], logy[ok], panel.history.a[:, :-1][ok]


def sensitivity_from_arrays(dlogc, logy, rho: float) -> float:
    return -_ols_slope(logy, dlogc) / (1.0 - rho)


def sensitivity_elasticity(panel, rho: float, n_groups: int = 10):
    """Elasticity -beta/(1-rho) from pooled OLS of dlog c_{t+1} on log y_t, plus per wealth decile."""
    dlogc, logy, a = _sensitivity_arrays(panel)
    el = sensitivity_from_arrays(dlogc, logy, rho)
    g = decile_groups(a, n_groups)
    series = []
    for k in range(n_groups):
        sel = g == k
        if not sel.any():
            continue
        try:
            series.append((float(a[sel].mean()), sensitivity_from_arrays(dlogc[sel], logy[sel], rho)))
        except StatsError:
            series.append((float(a[sel].mean()), math.nan))
    return el, series


# --- mobility ---------------------------------------------------------------

def percentile_ranks(x):
    x = np.asarray(x, dtype=float)
    return rankdata(x, method="average") / x.size


def rank_rank_slope(parent, child) -> float:
    parent = np.asarray(parent, dtype=float)
    child = np.asarray(child, dtype=float)
    if parent.shape != child.shape or parent.size < 2:
        raise StatsError("rank-rank slope needs paired vectors of length >= 2")
    rp = percentile_ranks(parent)
    if np.ptp(rp) == 0:
        raise StatsError("parent ranks are constant")
    return _ols_slope(rp, percentile_ranks(child))


def quantile_transition(parent, child, n_groups: int = 5) -> np.ndarray:
    gp = decile_groups(parent, n_groups)
    gc = decile_groups(child, n_groups)
    M = np.zeros((n_groups, n_groups))
    np.add.at(M, (gp, gc), 1.0)
    rows = M.sum(axis=1)
    if np.any(rows == 0):
        empty = [int(i) for i in np.flatnonzero(rows == 0)]
        raise StatsError(f"empty parent quantile row(s) {empty}")
    return M / rows[:, None]


def shorrocks_index(parent, child, n_groups: int = 5) -> float:
    if n_groups < 2:
        raise StatsError("Shorrocks index needs at least two groups")
    parent = np.asarray(parent)
    child = np.asarray(child)
    if parent.shape != child.shape:
        raise StatsError("parent and child vectors must be paired")
    if parent.size < n_groups:
        raise StatsError("fewer observations than quantile groups")
    M = quantile_transition(parent, child, n_groups)
    return float((n_groups - np.trace(M)) / (n_groups - 1))


def intergenerational_elasticity(parent, child, exclude_zero: bool = True, zero_tol: float = ZERO_WEALTH) -> float:
    """OLS slope of log child on log parent; pairs with (numerically) zero values dropped."""
    parent = np.asarray(parent, dtype=float)
    child = np.asarray(child, dtype=float)
    keep = (parent > zero_tol) & (child > zero_tol) if exclude_zero else np.ones(parent.shape, bool)
    if np.any((parent[keep] <= 0) | (child[keep] <= 0)):
        raise StatsError("log elasticity needs positive values")
    if keep.sum() < 2:
        raise StatsError("fewer than two positive pairs")
    return _ols_slope(np.log(parent[keep]), np.log(child[keep]))


def parent_child_values(panel, gap: int, kind: str = "wealth"):
    """Values at the end of childhood (the parent's last state) and ``gap`` periods later."""
    t0 = max(panel.childhood - 1, 0) if panel.childhood > 0 else 19
    t1 = t0 + gap
    if t1 >= panel.T:
        raise StatsError(f"panel too short for a gap of {gap}")
    src = panel.history.a if kind == "wealth" else panel.income
    return src[:, t0], src[:, t1]


def mobility(panel) -> dict:
    pi, ci = parent_child_values(panel, INCOME_GAP, "income")
    pw, cw = parent_child_values(panel, WEALTH_GAP, "wealth")
    return {
        "income_rank_rank": rank_rank_slope(pi, ci),
        "income_ige": intergenerational_elasticity(pi, ci, exclude_zero=False),
        "wealth_shorrocks": shorrocks_index(pw, cw),
        "wealth_ige": intergenerational_elasticity(pw, cw, exclude_zero=True),
    }


def rank_rank_binned(parent, child, n_bins: int = 20):
    rp, rc = percentile_ranks(parent), percentile_ranks(child)
    g = decile_groups(rp, n_bins)
    return [(float(rp[g == k].mean()), float(rc[g == k].mean())) for k in range(n_bins) if np.any(g == k)]


def extreme_outcomes(panel, threshold: float, n_bins: int = 20):
    """P(final wealth above ``threshold``) and P(final H2M) by parental wealth rank bin."""
    pw = panel.history.a[:, max(panel.childhood - 1, 0)]
    final_a = panel.history.action[:, -1]
    final_h2m = h2m_flag(panel.history.a[:, -1], panel.z_value[:, -1], panel.prices)
    g = decile_groups(percentile_ranks(pw), n_bins)
    return [
        ((k + 0.5) / n_bins, float((final_a[g == k] > threshold).mean()), float(final_h2m[g == k].mean()))
        for k in range(n_bins) if np.any(g == k)
    ]


def re_wealth_percentile(dist: WealthDistribution, q: float) -> float:
    cdf = np.cumsum(dist.asset_marginal())
    return float(dist.grid.points[min(np.searchsorted(cdf, q), cdf.size - 1)])


# --- welfare ----------------------------------------------------------------

def discounted_utility(c, prefs: Preferences, start: int) -> float:
    """Mean over agents of sum_{t >= start} beta^t u(c_t)."""
    c = np.asarray(c, dtype=float)
    T = c.shape[1]
    disc = prefs.beta ** np.arange(T)
    u = utility(c[:, start:], prefs)
    return float((u * disc[start:]).sum(axis=1).mean())


def welfare_variation(c_nn, c_re, prefs: Preferences, start: int = 20):
    """Compensating and equivalent variations between paired NN and RE consumption panels."""
    U_nn = discounted_utility(c_nn, prefs, start)
    U_re = discounted_utility(c_re, prefs, start)
    if U_nn >= 0 or U_re >= 0:
        raise StatsError("discounted utilities must be negative for gamma > 1")
    e = 1.0 / (1.0 - prefs.gamma)
    cv = (U_re / U_nn) ** e - 1.0
    ev = 1.0 - (U_nn / U_re) ** e
    return cv, ev


def panel_welfare(panel, prefs: Preferences):
    return welfare_variation(panel.history.consumption, panel.c_re, prefs, panel.childhood)


# --- policy diagnostics -----------------------------------------------------

def nn_policy(net: Mlp, mu: float, prices: Prices, c_min: float, a_cap: float = 50.0):
    """Clipped savings rule of every network in a batch: f(a, z) with a, z of shape (agents, K)."""
    pp = PolicyParams(network=net, target=net, mu=mu, a_cap=a_cap, c_min=c_min)

    def evaluate(a, z):
        a = np.asarray(a, dtype=float)
        z = np.broadcast_to(np.asarray(z, dtype=float), a.shape)
        return clip_action(pp, a, z, a + mu * forward(net, a, z), prices)[0]

    return evaluate


def re_evaluator(policy: RationalPolicy):
    """The RE savings rule with the :func:`nn_policy` calling convention (z given as levels)."""
    states = policy.chain.states

    def evaluate(a, z):
        a = np.asarray(a, dtype=float)
        z = np.broadcast_to(np.asarray(z, dtype=float), a.shape)
        idx = np.searchsorted(states, z)
        idx = np.clip(idx, 0, states.size - 1)
        if not np.allclose(states[idx], z, rtol=1e-12, atol=0):
            raise ParameterError("RE policy is only defined on the productivity grid")
        return interpolate_policy(policy, a, idx)

    return evaluate


@dataclass
class EvaluationGrid:
    a_sweep: np.ndarray
    z_fixed: int
    z_sweep: np.ndarray
    a_fixed: float

    @classmethod
    def default(cls, chain: MarkovChain, mean_a: float, a_max: float = 30.0, n_a: int = 31):
        z_mean = chain.states @ _stationary(chain)
        return cls(np.linspace(0.0, a_max, n_a), int(np.argmin(np.abs(chain.states - z_mean))),
                   np.arange(chain.n), float(mean_a))


def _stationary(chain):
    from .markov import stationary_distribution

    return stationary_distribution(chain)


def _sweeps(evaluate, grid: EvaluationGrid, chain: MarkovChain, n_agents: int):
    A = n_agents
    a1 = np.broadcast_to(grid.a_sweep, (A, grid.a_sweep.size))
    s1 = evaluate(a1, np.full(a1.shape, chain.states[grid.z_fixed]))
    a2 = np.full((A, grid.z_sweep.size), grid.a_fixed)
    s2 = evaluate(a2, np.broadcast_to(chain.states[grid.z_sweep], a2.shape))
    return s1, s2


def policy_sq_deviation(evaluate, n_agents: int, groups, re_policy: RationalPolicy, grid: EvaluationGrid):
    """Mean squared gap to the RE policy per group, along the a sweep and the z sweep.

    ``evaluate(a, z)`` maps (agents, K) arrays of wealth and productivity levels to
    next-period assets, one row per agent (see :func:`nn_policy`).
    """
    if evaluate is None:
        raise ParameterError("policy snapshots are required")
    chain = re_policy.chain
    s1, s2 = _sweeps(evaluate, grid, chain, n_agents)
    r1 = interpolate_policy(re_policy, grid.a_sweep, np.full(grid.a_sweep.size, grid.z_fixed))
    r2 = interpolate_policy(re_policy, np.full(grid.z_sweep.size, grid.a_fixed), grid.z_sweep)
    d1 = (s1 - r1) ** 2
    d2 = (s2 - r2) ** 2
    groups = np.asarray(groups)
    return {int(g): (d1[groups == g].mean(axis=0), d2[groups == g].mean(axis=0)) for g in np.unique(groups)}


def saving_rate(a, a_next, z, prices: Prices):
    income = prices.r * np.asarray(a) + prices.w * np.asarray(z)
    ok = income > 0
    rate = np.where(ok, (np.asarray(a_next) - a) / np.where(ok, income, 1.0), np.nan)
    return rate, ~ok


def policy_profile(evaluate, n_agents: int, grid: EvaluationGrid, chain: MarkovChain, prices: Prices,
                   quantiles=(0.1, 0.25, 0.5, 0.75, 0.9)):
    """Saving-rate tables along both sweeps plus per-z quantiles of the policies."""
    s1, s2 = _sweeps(evaluate, grid, chain, n_agents)
    a1 = np.broadcast_to(grid.a_sweep, s1.shape)
    rate1, skip1 = saving_rate(a1, s1, chain.states[grid.z_fixed], prices)
    z2 = np.broadcast_to(chain.states[grid.z_sweep], s2.shape)
    rate2, skip2 = saving_rate(grid.a_fixed, s2, z2, prices)
    return {
        "a_sweep": {"savings": s1, "rate": rate1, "mean_rate": np.nanmean(rate1, axis=0), "skipped": skip1},
        "z_sweep": {"savings": s2, "rate": rate2, "mean_rate": np.nanmean(rate2, axis=0), "skipped": skip2,
                    "quantiles": np.quantile(s2, quantiles, axis=0)},
    }


# --- report -----------------------------------------------------------------

@dataclass
class StatReport:
    columns: dict = field(default_factory=dict)  # column name -> {stat name: value}
    meta: dict = field(default_factory=dict)

    def add(self, column: str, name: str, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise StatsError(f"statistic {name} for {column} is not finite")
        self.columns.setdefault(column, {})[name] = value

    def names(self):
        seen = []
        for col in self.columns.values():
            for k in col:
                if k not in seen:
                    seen.append(k)
        return seen

    def to_text(self) -> str:
        lines = [f"# {k} = {v}" for k, v in sorted(self.meta.items())]
        for col, vals in self.columns.items():
            for k, v in vals.items():
                lines.append(f"{col}.{k} = {v:.17g}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = list(self.columns)
        w.writerow(["statistic"] + cols)
        for name in self.names():
            w.writerow([name] + [f"{self.columns[c][name]:.17g}" if name in self.columns[c] else "" for c in cols])
        return buf.getvalue()


def re_statistics(policy, dist, re_panel, rho: float) -> dict:
    """Headline statistics of the RE economy: cross-sections from the distribution, dynamics from a panel."""
    a = dist.grid.points
    w = dist.asset_marginal()
    shares = top_shares(a, (0.01, 0.05, 0.20), weights=w)
    out = {
        "h2m_frequency": h2m_frequency_re(dist, policy.chain, policy.prices),
        "h2m_persistence_2": h2m_persistence(re_panel, 2),
        "h2m_persistence_4": h2m_persistence(re_panel, 4),
        "gini": gini(a, weights=w),
        "top1_share": shares[0.01], "top5_share": shares[0.05], "top20_share": shares[0.20],
        "average_mpc": average_mpc_re(policy, dist),
        "elasticity": sensitivity_elasticity(re_panel, rho)[0],
        "cv": 0.0, "ev": 0.0,
    }
    out.update(mobility(re_panel))
    return out


def panel_statistics(panel, prefs: Preferences, rho: float, welfare: bool = True) -> dict:
    """Every headline statistic for one panel (adult records only)."""
    adult = np.asarray(panel.adult)
    a = panel.history.a[adult]
    shares = top_shares(a, (0.01, 0.05, 0.20))
    out = {
        "h2m_frequency": h2m_frequency(panel),
        "h2m_persistence_2": h2m_persistence(panel, 2),
        "h2m_persistence_4": h2m_persistence(panel, 4),
        "gini": gini(a),
        "top1_share": shares[0.01],
        "top5_share": shares[0.05],
        "top20_share": shares[0.20],
        "average_mpc": average_mpc(panel),
        "elasticity": sensitivity_elasticity(panel, rho)[0],
    }
    if welfare:
        out["cv"], out["ev"] = panel_welfare(panel, prefs)
    out.update(mobility(panel))
    return out
