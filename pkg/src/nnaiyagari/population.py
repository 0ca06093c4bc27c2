"""Cohort simulation, RE counterfactuals and the panel dataset."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .agent import PRESETS, Hyperparameters, LifeHistory, Replay, simulate_cohort
from .economy import Preferences, Prices
from .markov import MarkovChain, ParameterError, draw_from
from .rational import RationalPolicy, WealthDistribution, interpolate_policy
from .streams import INITIAL_STATE, Streams, counter

CHUNK = 256

PANEL_COLUMNS = [
    "agent_id", "generation", "period", "age", "a", "z", "action", "consumption",
    "euler_err", "clip_flag", "a_re_counterfactual", "z_index", "mpc",
]


@dataclass
class SimulationConfig:
    n_agents: int = 2000
    hp: Hyperparameters = field(default_factory=lambda: PRESETS["low"])
    master_seed: int = 0
    generation: int = 1
    snapshot_ages: tuple = (20, 100)
    preset: str = "low"

    def __post_init__(self):
        if self.n_agents < 1:
            raise ParameterError("n_agents must be at least 1")
        if self.generation not in (1, 2):
            raise ParameterError("generation must be 1 or 2")


@dataclass(eq=False)
class Panel:
    """Agent-by-period records of one simulated cohort plus RE counterfactual paths."""

    history: LifeHistory
    a_re: np.ndarray
    c_re: np.ndarray
    generation: int
    prices: Prices
    chain: MarkovChain
    childhood: int = 20
    meta: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return self.history.n_agents

    @property
    def T(self) -> int:
        return self.history.T

    @property
    def adult(self) -> np.ndarray:
        return np.broadcast_to(np.arange(self.T) >= self.childhood, (self.n_agents, self.T))

    @property
    def z_value(self) -> np.ndarray:
        return self.chain.states[self.history.z]

    @property
    def income(self) -> np.ndarray:
        return self.prices.r * self.history.a + self.prices.w * self.z_value

    def select(self, idx) -> "Panel":
        return Panel(self.history.select(idx), self.a_re[idx], self.c_re[idx], self.generation,
                     self.prices, self.chain, self.childhood, dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        h = self.history
        A, T = self.n_agents, self.T
        age = np.tile(np.arange(T), A)
        return pd.DataFrame({
            "agent_id": np.repeat(h.agent_ids, T),
            "generation": self.generation,
            "period": age,
            "age": age,
            "a": h.a.ravel(),
            "z": self.z_value.ravel(),
            "action": h.action.ravel(),
            "consumption": h.consumption.ravel(),
            "euler_err": h.euler_err.ravel(),
            "clip_flag": h.clip_flag.ravel(),
            "a_re_counterfactual": self.a_re.ravel(),
            "z_index": h.z.ravel(),
            "mpc": h.mpc.ravel(),
        })[PANEL_COLUMNS]

    @classmethod
    def from_frame(cls, df: pd.DataFrame, prices: Prices, chain: MarkovChain, childhood: int = 20, meta=None,
                   re_policy: RationalPolicy | None = None) -> "Panel":
        """Rebuild a panel from its CSV frame; ``re_policy`` supplies the terminal RE choice."""
        missing = [c for c in PANEL_COLUMNS if c not in df.columns]
        if missing:
            raise ParameterError(f"panel is missing column(s): {', '.join(missing)}")
        df = df.sort_values(["agent_id", "age"], kind="stable")
        ids = df["agent_id"].unique()
        A = ids.size
        T = len(df) // A
        if A * T != len(df):
            raise ParameterError("panel rows are not a complete agent-by-period grid")
        col = lambda c, dt=float: df[c].to_numpy(dtype=dt).reshape(A, T)  # noqa: E731
        h = LifeHistory(
            agent_ids=ids.astype(np.int64), a=col("a"), z=col("z_index", np.int64), action=col("action"),
            consumption=col("consumption"), euler_err=col("euler_err"), clip_flag=col("clip_flag", np.int8),
            mpc=col("mpc"),
        )
        a_re = col("a_re_counterfactual")
        terminal = None if re_policy is None else interpolate_policy(re_policy, a_re[:, -1], h.z[:, -1])
        c_re = _consumption_path(a_re, h.z, prices, chain, terminal)
        gen = int(df["generation"].iloc[0])
        return cls(h, a_re, c_re, gen, prices, chain, childhood, dict(meta or {}))


def _consumption_path(a_path, z, prices: Prices, chain: MarkovChain, terminal=None):
    """Consumption implied by a wealth path; the last period needs the terminal choice."""
    nxt = np.empty_like(a_path)
    nxt[:, :-1] = a_path[:, 1:]
    nxt[:, -1] = np.nan if terminal is None else terminal
    return prices.gross * a_path + prices.w * chain.states[z] - nxt


def counterfactual_re_trajectory(history: LifeHistory, re_policy: RationalPolicy, prices: Prices, chain: MarkovChain,
                                 start: int = 0):
    """Wealth and consumption paths under the RE policy on the same shocks.

    The realized path is kept up to age ``start`` (the end of childhood, when the
    agent takes over), and the RE policy decides from then on.
    """
    A, T = history.a.shape
    a = np.empty((A, T))
    a[:, : start + 1] = history.a[:, : start + 1]
    for t in range(start, T - 1):
        a[:, t + 1] = interpolate_policy(re_policy, a[:, t], history.z[:, t])
    terminal = interpolate_policy(re_policy, a[:, -1], history.z[:, -1])
    c = _consumption_path(a, history.z, prices, chain, terminal)
    if start > 0:
        c[:, :start] = history.consumption[:, :start]
    return a, c


def draw_initial_states(dist: WealthDistribution, streams: Streams):
    """Joint (a, z) draws from the RE stationary distribution, one per stream."""
    u = streams.uniform(counter(0, 0, INITIAL_STATE))
    flat = draw_from(dist.mass.ravel(), u)
    n_z = dist.mass.shape[1]
    return dist.grid.points[flat // n_z], flat % n_z


def _run_chunks(job, n_agents: int, threads: int):
    chunks = [np.arange(s, min(s + CHUNK, n_agents)) for s in range(0, n_agents, CHUNK)]
    if threads <= 1 or len(chunks) == 1:
        parts = [job(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, chunks))
    return LifeHistory.concat(parts)


def _finish(history: LifeHistory, cfg: SimulationConfig, re_policy, prices, chain, meta):
    a_re, c_re = counterfactual_re_trajectory(history, re_policy, prices, chain, min(cfg.hp.childhood, history.T - 1))
    meta = dict(meta, preset=cfg.preset, n_agents=cfg.n_agents, seed=cfg.master_seed, generation=cfg.generation)
    return Panel(history, a_re, c_re, cfg.generation, prices, chain, cfg.hp.childhood, meta)


def simulate_population(
    cfg: SimulationConfig,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    re_distribution: WealthDistribution,
    prices: Prices,
    prefs: Preferences,
    threads: int = 1,
) -> Panel:
    """First generation: RE parents decide during childhood, initial states from the RE distribution."""
    streams = Streams(cfg.master_seed, np.arange(cfg.n_agents), generation=1)
    a0, z0 = draw_initial_states(re_distribution, streams)

    def job(idx):
        return simulate_cohort(a0[idx], z0[idx], cfg.hp, chain, re_policy, prices, prefs,
                               streams.subset(idx), cfg.snapshot_ages)

    history = _run_chunks(job, cfg.n_agents, threads)
    return _finish(history, cfg, re_policy, prices, chain, {})


def parent_replay(parent: Panel, childhood: int) -> Replay:
    """The parent's last ``childhood`` periods, replayed as the child's early life."""
    h = parent.history
    n_adult = h.T - parent.childhood
    if n_adult < childhood or h.T <= childhood:
        raise ParameterError(f"parent panel has {n_adult} adult periods; need at least {childhood}")
    s = h.T - childhood
    return Replay(
        a=h.a[:, s:], z=h.z[:, s:], action=h.action[:, s:],
        a_before=h.a[:, s - 1], z_before=h.z[:, s - 1],
    )


def simulate_second_generation(
    parent_panel: Panel,
    cfg: SimulationConfig,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    prices: Prices,
    prefs: Preferences,
    threads: int = 1,
) -> Panel:
    """Children matched 1:1 to parents learn from the parents' last episodes, then inherit."""
    if parent_panel is None:
        raise ParameterError("second generation requires a parent panel")
    if cfg.n_agents != parent_panel.n_agents:
        cfg = SimulationConfig(parent_panel.n_agents, cfg.hp, cfg.master_seed, 2, cfg.snapshot_ages, cfg.preset)
    replay = parent_replay(parent_panel, cfg.hp.childhood)
    ids = parent_panel.history.agent_ids
    streams = Streams(cfg.master_seed, ids, generation=2)

    def job(idx):
        sub = Replay(replay.a[idx], replay.z[idx], replay.action[idx], replay.a_before[idx], replay.z_before[idx])
        return simulate_cohort(sub.a[:, 0], sub.z[:, 0], cfg.hp, chain, re_policy, prices, prefs,
                               streams.subset(idx), cfg.snapshot_ages, replay=sub)

    history = _run_chunks(job, ids.size, threads)
    return _finish(history, cfg, re_policy, prices, chain, {"parent_preset": parent_panel.meta.get("preset")})


def simulate_re_panel(
    n_agents: int,
    T: int,
    seed: int,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    re_distribution: WealthDistribution,
    prices: Prices,
) -> Panel:
    """Rational agents started from the stationary distribution; every period counts as adult."""
    from .streams import Z_DRAW
    from .markov import next_state

    streams = Streams(seed, np.arange(n_agents), generation=0)
    a = np.empty((n_agents, T))
    z = np.empty((n_agents, T), dtype=np.int64)
    a[:, 0], z[:, 0] = draw_initial_states(re_distribution, streams)
    action = np.empty((n_agents, T))
    for t in range(T):
        if t > 0:
            z[:, t] = next_state(chain, z[:, t - 1], streams.uniform(counter(t, 0, Z_DRAW)))
            a[:, t] = action[:, t - 1]
        action[:, t] = interpolate_policy(re_policy, a[:, t], z[:, t])
    h = 1e-3
    lo = np.maximum(a - h, 0.0)
    dpi = (interpolate_policy(re_policy, a + h, z) - interpolate_policy(re_policy, lo, z)) / (a + h - lo)
    history = LifeHistory(
        agent_ids=np.arange(n_agents), a=a, z=z, action=action,
        consumption=prices.gross * a + prices.w * chain.states[z] - action,
        euler_err=np.full((n_agents, T), np.nan), clip_flag=np.zeros((n_agents, T), dtype=np.int8),
        mpc=1.0 - dpi / prices.gross,
    )
    return Panel(history, a.copy(), history.consumption.copy(), 0, prices, chain, childhood=0,
                 meta={"preset": "re", "n_agents": n_agents, "seed": seed})


def diversion_by_age(panel: Panel):
    """Mean and standard deviation across agents of a_t - a_t^RE at each age."""
    d = panel.history.a - panel.a_re
    return d.mean(axis=0), d.std(axis=0)


@dataclass
class AsymptoticResult:
    gaps: np.ndarray  # gap after each period's learning; gaps[0] is before any learning
    euler_residuals: np.ndarray
    euler_states: np.ndarray
    history: LifeHistory
    a_eval: np.ndarray
    z_index: int


def policy_gap(net, hp: Hyperparameters, re_policy: RationalPolicy, prices: Prices, a_eval, z_index: int):
    """max |pi_NN - pi_RE| over ``a_eval`` at productivity state ``z_index``, per network in the batch."""
    from .stats import nn_policy

    chain = re_policy.chain
    f = nn_policy(net, hp.mu, prices, prices.w * chain.states[0], hp.a_cap)
    a = np.broadcast_to(a_eval, (net.n_agents, np.size(a_eval)))
    nn = f(a, chain.states[z_index])
    re = interpolate_policy(re_policy, np.asarray(a_eval, dtype=float), np.full(np.size(a_eval), z_index))
    return np.max(np.abs(nn - re), axis=1)


def policy_euler_residuals(net, hp: Hyperparameters, chain: MarkovChain, prices: Prices, prefs: Preferences,
                           n_states: int, seed: int, a_max: float = 30.0):
    """|beta(1+r) E u'(c') / u'(c) - 1| of a single network at random interior states."""
    from .economy import marginal_utility
    from .stats import nn_policy

    c_min = prices.w * chain.states[0]
    f = nn_policy(net, hp.mu, prices, c_min, hp.a_cap)
    rng = np.random.default_rng(seed)
    p_z = _stationary_z(chain)
    states, res = [], []
    while len(res) < n_states:
        a = rng.uniform(0.0, a_max)
        z = int(rng.choice(chain.n, p=p_z))
        a1 = float(f(np.array([[a]]), chain.states[z])[0, 0])
        c0 = prices.gross * a + prices.w * chain.states[z] - a1
        if a1 <= 1e-6 or a1 >= hp.a_cap or c0 <= c_min:
            continue  # constrained: the Euler equation need not hold with equality
        a2 = f(np.full((1, chain.n), a1), chain.states[None, :])[0]
        c1 = prices.gross * a1 + prices.w * chain.states - a2
        ratio = chain.transition[z] @ marginal_utility(c1, prefs) / marginal_utility(c0, prefs)
        states.append((a, z))
        res.append(abs(prefs.beta * prices.gross * ratio - 1.0))
    return np.array(res), np.array(states)


def _stationary_z(chain):
    from .markov import stationary_distribution

    return stationary_distribution(chain)


def run_asymptotic(
    hp: Hyperparameters,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    re_distribution: WealthDistribution,
    prices: Prices,
    prefs: Preferences,
    seed: int,
    a_eval=None,
    n_euler_states: int = 50,
) -> AsymptoticResult:
    """One agent learning from external experiences only, tracked against the RE policy every period."""
    a_eval = np.linspace(0.0, 30.0, 61) if a_eval is None else np.asarray(a_eval, dtype=float)
    z_mid = (chain.n - 1) // 2
    streams = Streams(seed, [0], generation=1)
    a0, z0 = draw_initial_states(re_distribution, streams)
    ages = tuple(range(hp.life_T + 1))
    history = simulate_cohort(a0, z0, hp, chain, re_policy, prices, prefs, streams, ages)
    gaps = np.array([policy_gap(history.snapshots[t], hp, re_policy, prices, a_eval, z_mid)[0] for t in ages])
    final = history.snapshots[hp.life_T]
    res, states = policy_euler_residuals(final, hp, chain, prices, prefs, n_euler_states, seed)
    return AsymptoticResult(gaps, res, states, history, a_eval, z_mid)
