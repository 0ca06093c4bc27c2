"""Rational-expectations benchmark: household VFI, stationary distribution, equilibrium r."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from .economy import (
    Preferences,
    Prices,
    Technology,
    capital_from_rate,
    labor_supply,
    marginal_utility,
    wage_from_rate,
)
from .markov import MarkovChain, NumericalError, ParameterError

log = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class AssetGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ParameterError("asset grid needs at least two points")
        if np.any(np.diff(pts) <= 0):
            raise ParameterError("asset grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.size

    @property
    def floor(self) -> float:
        return float(self.points[0])

    @property
    def top(self) -> float:
        return float(self.points[-1])

    @classmethod
    def squared(cls, n_points: int = 300, a_max: float = 60.0, a_min: float = 0.0) -> "AssetGrid":
        """Grid spaced by a squared-linear map, dense near the borrowing limit."""
        x = np.linspace(0.0, 1.0, n_points)
        return cls(a_min + (a_max - a_min) * x**2)


@dataclass(eq=False)
class RationalPolicy:
    savings: np.ndarray
    value: np.ndarray
    grid: AssetGrid
    chain: MarkovChain
    prices: Prices
    iterations: int = 0
    clamped: int = field(default=0, repr=False)

    def consumption(self) -> np.ndarray:
        return _cash_on_hand(self.grid, self.chain, self.prices) - self.savings

    def __call__(self, a, z_index):
        return interpolate_policy(self, a, z_index)


@dataclass(eq=False)
class WealthDistribution:
    mass: np.ndarray
    grid: AssetGrid

    def capital(self) -> float:
        return float(self.mass.sum(axis=1) @ self.grid.points)

    def asset_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=1)


@dataclass(eq=False)
class Equilibrium:
    prices: Prices
    policy: RationalPolicy
    distribution: WealthDistribution
    capital: float
    labor: float
    iterations: int


def _cash_on_hand(grid: AssetGrid, chain: MarkovChain, prices: Prices) -> np.ndarray:
    return prices.gross * grid.points[:, None] + prices.w * chain.states[None, :]


class _ColumnSpline:
    """Cubic spline in assets, one column per productivity state, evaluated column-wise."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = x
        self.coef = CubicSpline(x, y, axis=0).c  # (4, n-1, n_z)

    def locate(self, q: np.ndarray):
        seg = np.clip(np.searchsorted(self.x, q, side="right") - 1, 0, self.x.size - 2)
        return seg, q - self.x[seg]

    def at(self, seg, dx, cols):
        c = self.coef[:, seg, cols]
        return ((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3]

    def __call__(self, q, cols):
        seg, dx = self.locate(q)
        return self.at(seg, dx, cols)


def _period_utility(c, gamma):
    return c ** (1.0 - gamma) / (1.0 - gamma)


def solve_vfi(
    prices: Prices,
    chain: MarkovChain,
    grid: AssetGrid,
    prefs: Preferences,
    tol: float = 1e-9,
    max_iter: int = 2000,
    howard_sweeps: int = 50,
    v0: np.ndarray | None = None,
    check_top: bool = True,
) -> RationalPolicy:
    """Continuous-choice value function iteration with Howard acceleration.

    Continuation values are cubic splines in next-period assets; the maximizer is
    bracketed by a discrete search over grid nodes and refined by golden section.
    """
    beta, gamma = prefs.beta, prefs.gamma
    if beta * prices.gross >= 1.0:
        warnings.warn("beta(1+r) >= 1: household problem may have no stationary solution", RuntimeWarning)
    a = grid.points
    n_a, n_z = a.size, chain.n
    coh = _cash_on_hand(grid, chain, prices)
    c_eps = 1e-10
    hi_feas = np.minimum(coh - c_eps, grid.top)
    if np.any(hi_feas < grid.floor):
        raise ParameterError("cash on hand below the borrowing limit at some node")
    cols = np.broadcast_to(np.arange(n_z), (n_a, n_z))
    PT = chain.transition.T

    if v0 is None:
        c0 = np.maximum(coh - a[:, None], 1e-3)
        V = _period_utility(c0, gamma) / (1.0 - beta)
    else:
        V = np.array(v0, dtype=float)

    # discrete-choice payoff table for bracketing: c[i, j, k] with k the next-period node
    c_disc = coh[:, :, None] - a[None, None, :]
    feasible = c_disc > c_eps
    u_disc = np.where(feasible, _period_utility(np.where(feasible, c_disc, 1.0), gamma), -np.inf)

    policy = None
    for it in range(1, max_iter + 1):
        W = beta * (V @ PT)
        k = np.argmax(u_disc + np.swapaxes(W, 0, 1)[None, :, :], axis=2)
        lo = a[np.maximum(k - 1, 0)]
        hi = np.minimum(a[np.minimum(k + 1, n_a - 1)], hi_feas)
        lo = np.minimum(lo, hi)
        spline = _ColumnSpline(a, W)

        def objective(x):
            return _period_utility(coh - x, gamma) + spline(x, cols)

        x1 = hi - GOLDEN * (hi - lo)
        x2 = lo + GOLDEN * (hi - lo)
        f1, f2 = objective(x1), objective(x2)
        for _ in range(50):
            left = f1 >= f2
            hi = np.where(left, x2, hi)
            lo = np.where(left, lo, x1)
            x_keep = np.where(left, x1, x2)
            f_keep = np.where(left, f1, f2)
            x_new = np.where(left, hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo))
            f_new = objective(x_new)
            x1 = np.where(left, x_new, x_keep)
            f1 = np.where(left, f_new, f_keep)
            x2 = np.where(left, x_keep, x_new)
            f2 = np.where(left, f_keep, f_new)
        x = 0.5 * (lo + hi)
        # corner candidates: the borrowing limit and the discrete optimum itself
        cand = [x, np.full_like(x, grid.floor), np.minimum(a[k], hi_feas)]
        vals = [objective(cv) for cv in cand]
        best = np.argmax(np.stack(vals), axis=0)
        policy = np.choose(best, cand)
        V_new = np.choose(best, vals)

        # Howard policy-evaluation sweeps at the fixed policy
        u_pol = _period_utility(coh - policy, gamma)
        seg, dx = spline.locate(policy)
        for _ in range(howard_sweeps):
            sp_h = _ColumnSpline(a, beta * (V_new @ PT))
            V_new = u_pol + sp_h.at(seg, dx, cols)

        err = np.max(np.abs(V_new - V)) / max(1.0, np.max(np.abs(V_new)))
        V = V_new
        if err < tol:
            break
    else:
        raise NumericalError(f"value function iteration did not converge, last change {err:.3e}")

    policy = np.clip(policy, grid.floor, grid.top)
    if check_top and _binds_at_top(policy, grid):
        raise NumericalError("savings bind at the top of the asset grid; enlarge the grid")
    log.debug("VFI converged in %d iterations (r=%.6f)", it, prices.r)
    return RationalPolicy(savings=policy, value=V, grid=grid, chain=chain, prices=prices, iterations=it)


def _binds_at_top(savings, grid: AssetGrid) -> bool:
    """Savings hit the grid top for some productivity state at or below the median.

    The highest states are transient episodes with negligible stationary mass and
    accumulate without bound over a finite horizon; they are not checked.
    """
    n_z = savings.shape[1]
    return bool(np.any(savings[-1, : (n_z + 1) // 2] >= grid.top - 1e-8))


def _lottery(grid: AssetGrid, x: np.ndarray):
    """Split each point of ``x`` between its bracketing grid nodes, preserving the mean."""
    pts = grid.points
    x = np.clip(x, pts[0], pts[-1])
    lo = np.clip(np.searchsorted(pts, x, side="right") - 1, 0, pts.size - 2)
    w_hi = (x - pts[lo]) / (pts[lo + 1] - pts[lo])
    return lo, 1.0 - w_hi, w_hi


def transition_operator(policy: RationalPolicy) -> sp.csr_matrix:
    """Sparse Markov operator on flattened (asset, productivity) states, row = origin."""
    grid, chain = policy.grid, policy.chain
    n_a, n_z = grid.n_points, chain.n
    lo, w_lo, w_hi = _lottery(grid, policy.savings)
    P = chain.transition
    src = np.arange(n_a * n_z).reshape(n_a, n_z)
    rows, cols, vals = [], [], []
    for node, w in ((lo, w_lo), (lo + 1, w_hi)):
        # destination (node, z') with prob w * P[z, z']
        r = np.repeat(src[:, :, None], n_z, axis=2)
        c = node[:, :, None] * n_z + np.arange(n_z)[None, None, :]
        v = w[:, :, None] * P[None, :, :]
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())
    n = n_a * n_z
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def stationary_wealth(
    policy: RationalPolicy,
    chain: MarkovChain | None = None,
    initial: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 200_000,
) -> WealthDistribution:
    """Invariant joint distribution over (assets, productivity) under the policy."""
    grid = policy.grid
    n_a, n_z = grid.n_points, policy.chain.n
    T = transition_operator(policy)
    TT = T.T.tocsr()
    if initial is not None:
        m = np.asarray(initial, dtype=float).ravel().copy()
    else:
        # direct solve for a warm start; power iteration below certifies it
        n = n_a * n_z
        A = (sp.identity(n, format="csr") - TT).tolil()
        A[n - 1, :] = np.ones(n)
        b = np.zeros(n)
        b[-1] = 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = spsolve(A.tocsc(), b)
        if not np.all(np.isfinite(m)):
            m = np.full(n, 1.0 / n)
        m = np.clip(m, 0.0, None)
    m /= m.sum()
    tv = np.inf
    for _ in range(max_iter):
        m_new = TT @ m
        m_new /= m_new.sum()
        tv = 0.5 * np.abs(m_new - m).sum()
        m = m_new
        if tv < tol:
            return WealthDistribution(mass=m.reshape(n_a, n_z), grid=grid)
    raise NumericalError(f"stationary wealth distribution did not converge, TV change {tv:.3e}")


def euler_error(c_now, c_next, prices: Prices, prefs: Preferences):
    return prefs.beta * prices.gross * marginal_utility(c_next, prefs) / marginal_utility(c_now, prefs) - 1.0


def interpolate_policy(policy: RationalPolicy, a, z_index):
    """Piecewise-linear savings at off-grid wealth; out-of-grid wealth is clamped and counted."""
    pts = policy.grid.points
    a = np.asarray(a, dtype=float)
    z_index = np.asarray(z_index)
    outside = (a < pts[0]) | (a > pts[-1])
    n_out = int(np.count_nonzero(outside))
    if n_out:
        policy.clamped += n_out
    lo, w_lo, w_hi = _lottery(policy.grid, a)
    s = policy.savings
    out = w_lo * s[lo, z_index] + w_hi * s[lo + 1, z_index]
    out = np.clip(out, pts[0], pts[-1])
    return float(out) if out.ndim == 0 else out


def euler_residuals(policy: RationalPolicy, prefs: Preferences) -> np.ndarray:
    """Expected Euler residual at each node; NaN where the borrowing limit binds."""
    prices, chain = policy.prices, policy.chain
    c = policy.consumption()
    a_next = policy.savings
    n_z = chain.n
    mu_next = np.zeros_like(c)
    for k in range(n_z):
        a2 = interpolate_policy(policy, a_next, np.full(a_next.shape, k))
        c2 = prices.gross * a_next + prices.w * chain.states[k] - a2
        mu_next += chain.transition[None, :, k] * marginal_utility(c2, prefs)
    resid = prefs.beta * prices.gross * mu_next / marginal_utility(c, prefs) - 1.0
    resid[a_next <= policy.grid.floor + 1e-8] = np.nan
    return resid


def capital_supply(
    r: float,
    tech: Technology,
    prefs: Preferences,
    chain: MarkovChain,
    grid: AssetGrid,
    v0=None,
):
    prices = Prices(r=r, w=wage_from_rate(r, tech))
    policy = solve_vfi(prices, chain, grid, prefs, v0=v0, check_top=False)
    dist = stationary_wealth(policy, chain)
    return dist.capital(), policy, dist


def find_equilibrium(
    tech: Technology,
    prefs: Preferences,
    chain: MarkovChain,
    grid: AssetGrid,
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-7,
    max_iter: int = 80,
) -> Equilibrium:
    """Bisection on r for capital demand = stationary household asset supply."""
    L = labor_supply(chain)
    if bracket is None:
        bracket = (-tech.delta + 1e-4, 1.0 / prefs.beta - 1.0 - 1e-4)
    r_lo, r_hi = bracket

    def gap(r, v0=None):
        K_s, pol, dist = capital_supply(r, tech, prefs, chain, grid, v0=v0)
        K_d = capital_from_rate(r, L, tech)
        return (K_d - K_s) / K_d, pol, dist, K_d

    g_lo = gap(r_lo)[0]
    g_hi, pol, _, _ = gap(r_hi)
    if not (g_lo > 0 > g_hi):
        raise ParameterError(f"bracket [{r_lo}, {r_hi}] does not straddle market clearing ({g_lo:.3g}, {g_hi:.3g})")
    v0 = pol.value
    for it in range(1, max_iter + 1):
        r = 0.5 * (r_lo + r_hi)
        g, pol, dist, K_d = gap(r, v0)
        v0 = pol.value
        log.info("bisection %2d: r=%.8f gap=%+.3e", it, r, g)
        if abs(g) < tol:
            break
        if g > 0:
            r_lo = r
        else:
            r_hi = r
    else:
        raise NumericalError(f"bisection did not converge; last relative gap {g:.3e}")
    if _binds_at_top(pol.savings, grid) or dist.mass[-1].sum() > 1e-8:
        raise NumericalError("equilibrium savings bind at the top of the asset grid; enlarge the grid")
    return Equilibrium(prices=pol.prices, policy=pol, distribution=dist, capital=K_d, labor=L, iterations=it)
