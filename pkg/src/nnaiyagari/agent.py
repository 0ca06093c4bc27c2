"""Boundedly rational learning agents.

A cohort of agents is advanced in lockstep: every array carries a leading agent
axis, and every random draw comes from that agent's own counter-based stream, so
an agent's history depends only on (seed, agent id).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .economy import Preferences, Prices
from .markov import MarkovChain, ParameterError, draw_from, next_state, stationary_distribution
from .net import (
    NO_CLIP,
    AdamState,
    CorruptionError,
    Mlp,
    PolicyParams,
    adam_ascent_step,
    backward,
    clip_action,
    forward,
    forward_cache,
    init_weights,
    policy_action,
    polyak_update,
)
from .rational import RationalPolicy, interpolate_policy
from .streams import EXT_A, EXT_Z, EXT_ZNEXT, MEMORY, N_EXTERNAL, Z_DRAW, Streams, counter


@dataclass(frozen=True)
class Hyperparameters:
    hidden_sizes: tuple = (4, 4)
    learn_freq: int = 50
    external_share: float = 0.25
    memory_size: int = 50
    batch_size: int = 10
    adam_alpha: float = 0.01
    polyak_lambda: float = 0.01
    mu: float = 0.01
    life_T: int = 100
    childhood: int = 20
    external_a_max: float = 30.0
    a_cap: float = 50.0
    inertial_init: bool = False  # zero output layer: start exactly at pi(a, z) = a

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0 <= self.external_share <= 1:
            raise ParameterError("external_share must lie in [0, 1]")
        if self.batch_size > self.memory_size:
            raise ParameterError("batch_size cannot exceed memory_size")
        if min(self.batch_size, self.memory_size, self.life_T) < 1 or self.learn_freq < 0:
            raise ParameterError("sizes must be positive")
        if not 0 <= self.childhood <= self.life_T:
            raise ParameterError("childhood must lie within the lifetime")
        if self.external_a_max < 0:
            raise ParameterError("external_a_max must be nonnegative")

    @property
    def layer_sizes(self) -> tuple:
        return (2,) + self.hidden_sizes + (1,)


PRESETS = {
    "low": Hyperparameters(),
    "high": Hyperparameters(hidden_sizes=(8, 8), learn_freq=200, external_share=0.5, memory_size=100),
    "asymptotic": Hyperparameters(
        hidden_sizes=(4, 8, 8, 4), learn_freq=10_000, external_share=1.0, memory_size=50, adam_alpha=0.001
    ),
}


@dataclass(eq=False)
class MemoryBuffer:
    """Ring buffers of the last M episodes (a, z, z') for every agent of a cohort."""

    a: np.ndarray
    z: np.ndarray
    z_next: np.ndarray
    size: int = 0
    head: int = 0

    @classmethod
    def empty(cls, n_agents: int, capacity: int) -> "MemoryBuffer":
        return cls(
            np.zeros((n_agents, capacity)),
            np.zeros((n_agents, capacity), dtype=np.int64),
            np.zeros((n_agents, capacity), dtype=np.int64),
        )

    @property
    def capacity(self) -> int:
        return self.a.shape[1]

    def push(self, a, z, z_next):
        self.a[:, self.head] = a
        self.z[:, self.head] = z
        self.z_next[:, self.head] = z_next
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered(self):
        """Stored episodes oldest first."""
        idx = (np.arange(self.size) + (self.head - self.size)) % self.capacity
        return self.a[:, idx], self.z[:, idx], self.z_next[:, idx]


@dataclass(eq=False)
class AgentState:
    policy: PolicyParams
    adam: AdamState
    buffer: MemoryBuffer
    a_now: np.ndarray
    z_now: np.ndarray
    age: int
    streams: Streams
    hp: Hyperparameters
    stationary_z: np.ndarray = field(repr=False, default=None)
    a_last: np.ndarray | None = None
    z_last: np.ndarray | None = None

    @property
    def n_agents(self) -> int:
        return self.a_now.size


def new_agents(
    a0,
    z0,
    hp: Hyperparameters,
    chain: MarkovChain,
    prices: Prices,
    streams: Streams,
) -> AgentState:
    a0 = np.asarray(a0, dtype=float).reshape(-1)
    z0 = np.asarray(z0, dtype=np.int64).reshape(-1)
    if not (a0.size == z0.size == len(streams)):
        raise ParameterError("initial states and streams must have one entry per agent")
    if np.any(a0 < 0) or np.any(a0 > hp.a_cap):
        raise ParameterError("initial wealth outside [0, a_cap]")
    net = init_weights(hp.layer_sizes, streams)
    if hp.inertial_init:
        net.weights[-1][...] = 0.0
        net.biases[-1][...] = 0.0
    policy = PolicyParams(
        network=net,
        target=net.copy(),
        mu=hp.mu,
        a_floor=0.0,
        a_cap=hp.a_cap,
        c_min=prices.w * chain.states[0],
        polyak_lambda=hp.polyak_lambda,
    )
    return AgentState(
        policy=policy,
        adam=AdamState.for_net(net, alpha=hp.adam_alpha),
        buffer=MemoryBuffer.empty(a0.size, hp.memory_size),
        a_now=a0.copy(),
        z_now=z0.copy(),
        age=0,
        streams=streams,
        hp=hp,
        stationary_z=stationary_distribution(chain),
    )


def _uniforms(rng, ctr: int, n: int, n_agents: int = 1):
    if isinstance(rng, Streams):
        return rng.uniform(ctr, n)
    return rng.random((n_agents, n))


def draw_external_episode(chain: MarkovChain, hp: Hyperparameters, rng, n: int = 1, ctr: int = 0, p_stat=None):
    """Random (a, z, z') triples: a uniform on [0, external_a_max], z stationary, z' from Gamma."""
    if p_stat is None:
        p_stat = stationary_distribution(chain)
    ua = _uniforms(rng, ctr | EXT_A, n)
    uz = _uniforms(rng, ctr | EXT_Z, n)
    un = _uniforms(rng, ctr | EXT_ZNEXT, n)
    a = hp.external_a_max * ua
    z = draw_from(p_stat, uz)
    zn = next_state(chain, z, un)
    return a, z, zn


def assemble_batch(state: AgentState, chain: MarkovChain, period: int, step: int):
    """The learning set E: Binomial(N, kappa) external episodes, the rest replayed from memory.

    Returns arrays (a, z index, z' index) of shape (agents, N) and the external
    count per agent, or None while the buffer is empty (unless every episode is
    external by construction, kappa = 1).
    """
    hp = state.hp
    N = hp.batch_size
    A = state.n_agents
    ctr = counter(period, step, 0)
    buf = state.buffer
    if buf.size == 0 and hp.external_share < 1.0:
        return None
    uk = state.streams.uniform(ctr | N_EXTERNAL, N)
    k = (uk < hp.external_share).sum(axis=1)
    ea, ez, en = draw_external_episode(chain, hp, state.streams, N, ctr, state.stationary_z)
    slot = np.arange(N)[None, :]
    external = slot < k[:, None]
    if buf.size == 0:
        return ea, ez, en, k
    um = state.streams.uniform(ctr | MEMORY, N)
    B = buf.size
    n_mem = N - k
    # partial Fisher-Yates over the filled slots; positions j >= n_mem are unused
    perm = np.broadcast_to(np.arange(B), (A, B)).copy()
    rows = np.arange(A)
    picks = np.empty((A, N), dtype=np.int64)
    for j in range(N):
        if j < B:
            jj = j + np.minimum((um[:, j] * (B - j)).astype(np.int64), B - j - 1)
            pj = perm[rows, jj]
            perm[rows, jj] = perm[rows, j]
            perm[rows, j] = pj
            picks[:, j] = pj
        else:
            picks[:, j] = 0
    with_repl = np.minimum((um * B).astype(np.int64), B - 1)
    short = (n_mem > B)[:, None]
    mem_pos = np.clip(slot - k[:, None], 0, N - 1)
    idx = np.where(short, np.take_along_axis(with_repl, mem_pos, 1), np.take_along_axis(picks, mem_pos, 1))
    ma = np.take_along_axis(buf.a, idx, 1)
    mz = np.take_along_axis(buf.z, idx, 1)
    mn = np.take_along_axis(buf.z_next, idx, 1)
    return (
        np.where(external, ea, ma),
        np.where(external, ez, mz),
        np.where(external, en, mn),
        k,
    )


def euler_gradient(state: AgentState, prices: Prices, prefs: Preferences, a, z_val, zn_val):
    """Per-episode Euler-error weights and the summed parameter gradient of the clipped policy."""
    p = state.policy
    phi, cache = forward_cache(p.network, a, z_val)
    x, flag = clip_action(p, a, z_val, a + p.mu * phi, prices)
    a_tilde, _ = policy_action(p, x, zn_val, prices, use_target=True)
    c1 = prices.gross * a + prices.w * z_val - x
    c2 = prices.gross * x + prices.w * zn_val - a_tilde
    mu1 = np.maximum(c1, p.c_min) ** (-prefs.gamma)
    mu2 = np.maximum(c2, p.c_min) ** (-prefs.gamma)
    weight = prefs.beta * prices.gross * mu2 - mu1
    weight = np.where(flag == NO_CLIP, weight, 0.0)
    grads = backward(p.network, cache, p.mu * weight)
    euler = prefs.beta * prices.gross * mu2 / mu1 - 1.0
    return grads, euler, flag


def learning_step(state: AgentState, prices: Prices, prefs: Preferences, batch, chain: MarkovChain):
    """One Adam ascent step on the counterfactual two-period utility, then a target update.

    Returns the batch-mean Euler error per agent.
    """
    a, z, zn = batch[0], batch[1], batch[2]
    grads, euler, _ = euler_gradient(state, prices, prefs, a, chain.states[z], chain.states[zn])
    if not np.all(np.isfinite(euler)):
        raise CorruptionError("non-finite Euler error in learning step")
    adam_ascent_step(state.policy.network, state.adam, grads)
    polyak_update(state.policy.target, state.policy.network, state.policy.polyak_lambda)
    return euler.mean(axis=1)


@dataclass(eq=False)
class LifeHistory:
    """Per-period records for a cohort; arrays are (agents, T)."""

    agent_ids: np.ndarray
    a: np.ndarray
    z: np.ndarray
    action: np.ndarray
    consumption: np.ndarray
    euler_err: np.ndarray
    clip_flag: np.ndarray
    mpc: np.ndarray
    snapshots: dict = field(default_factory=dict)
    final_adam_steps: int = 0

    @property
    def n_agents(self) -> int:
        return self.a.shape[0]

    @property
    def T(self) -> int:
        return self.a.shape[1]

    def select(self, idx) -> "LifeHistory":
        return LifeHistory(
            self.agent_ids[idx], self.a[idx], self.z[idx], self.action[idx], self.consumption[idx],
            self.euler_err[idx], self.clip_flag[idx], self.mpc[idx],
            {k: v.select(idx) for k, v in self.snapshots.items()}, self.final_adam_steps,
        )

    @staticmethod
    def concat(parts: list) -> "LifeHistory":
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        snaps = {}
        for age in parts[0].snapshots:
            ws = [p.snapshots[age] for p in parts]
            snaps[age] = Mlp(
                [np.concatenate([w.weights[i] for w in ws]) for i in range(len(ws[0].weights))],
                [np.concatenate([w.biases[i] for w in ws]) for i in range(len(ws[0].biases))],
            )
        return LifeHistory(
            cat("agent_ids"), cat("a"), cat("z"), cat("action"), cat("consumption"),
            cat("euler_err"), cat("clip_flag"), cat("mpc"), snaps, parts[0].final_adam_steps,
        )


@dataclass
class Replay:
    """Parent-generated childhood: states and actions imposed for the first periods."""

    a: np.ndarray
    z: np.ndarray
    action: np.ndarray
    a_before: np.ndarray
    z_before: np.ndarray

    @property
    def length(self) -> int:
        return self.a.shape[1]


MPC_STEP = 1e-3


def _mpc(evaluate, a, prices: Prices, a_floor: float = 0.0, h: float = MPC_STEP):
    """1 - (1/(1+r)) d pi / d a by central differences, one-sided at the floor."""
    lo = np.maximum(a - h, a_floor)
    hi = a + h
    return 1.0 - (evaluate(hi) - evaluate(lo)) / (hi - lo) / prices.gross


def live_one_period(
    state: AgentState,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    prices: Prices,
    prefs: Preferences,
    replay: Replay | None = None,
):
    """Advance every agent by one period; returns the period's record as a dict of (agents,) arrays."""
    hp = state.hp
    t = state.age
    if t >= hp.life_T:
        raise ParameterError("agent has already lived its full life")
    p = state.policy
    forced = replay is not None and t < replay.length
    if forced:
        a_t = replay.a[:, t].astype(float)
        z_t = replay.z[:, t].astype(np.int64)
        action = replay.action[:, t].astype(float)
        flag = np.zeros(state.n_agents, dtype=np.int8)
        mpc = np.full(state.n_agents, np.nan)
    else:
        a_t = state.a_now
        z_t = state.z_now if t == 0 else next_state(chain, state.z_now, state.streams.uniform(counter(t, 0, Z_DRAW)))
        z_val = chain.states[z_t]
        if t < hp.childhood:
            action = interpolate_policy(re_policy, a_t, z_t)
            flag = np.zeros(state.n_agents, dtype=np.int8)
            mpc = _mpc(lambda q: interpolate_policy(re_policy, q, z_t), a_t, prices)
        else:
            action, flag = policy_action(p, a_t, z_val, prices)
            mpc = _mpc(lambda q: policy_action(p, q, z_val, prices)[0], a_t, prices)
    if t > 0:
        state.buffer.push(state.a_last, state.z_last, z_t)
    elif forced:
        state.buffer.push(replay.a_before, replay.z_before, z_t)
    errs = []
    for s in range(hp.learn_freq):
        batch = assemble_batch(state, chain, t, s)
        if batch is None:
            break
        errs.append(learning_step(state, prices, prefs, batch, chain))
    euler = np.mean(errs, axis=0) if errs else np.full(state.n_agents, np.nan)
    consumption = prices.gross * a_t + prices.w * chain.states[z_t] - action
    state.a_last, state.z_last = a_t, z_t
    state.a_now = np.asarray(action, dtype=float)
    state.z_now = z_t
    state.age = t + 1
    return dict(a=a_t, z=z_t, action=state.a_now, consumption=consumption, euler_err=euler, clip_flag=flag, mpc=mpc)


def simulate_cohort(
    a0,
    z0,
    hp: Hyperparameters,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    prices: Prices,
    prefs: Preferences,
    streams: Streams,
    snapshot_ages=(),
    replay: Replay | None = None,
) -> LifeHistory:
    state = new_agents(a0, z0, hp, chain, prices, streams)
    A, T = state.n_agents, hp.life_T
    rec = {
        "a": np.empty((A, T)), "z": np.empty((A, T), dtype=np.int64), "action": np.empty((A, T)),
        "consumption": np.empty((A, T)), "euler_err": np.empty((A, T)),
        "clip_flag": np.empty((A, T), dtype=np.int8), "mpc": np.empty((A, T)),
    }
    snaps = {}
    for t in range(T):
        if t in snapshot_ages:
            snaps[t] = state.policy.network.copy()
        out = live_one_period(state, chain, re_policy, prices, prefs, replay)
        for k, v in out.items():
            rec[k][:, t] = v
    if T in snapshot_ages:
        snaps[T] = state.policy.network.copy()
    return LifeHistory(agent_ids=streams.ids.copy(), snapshots=snaps, final_adam_steps=state.adam.step_count, **rec)


def simulate_lifetime(
    a0: float,
    z0: int,
    hp: Hyperparameters,
    chain: MarkovChain,
    re_policy: RationalPolicy,
    prices: Prices,
    prefs: Preferences,
    seed: int,
    agent_id: int = 0,
    snapshot_ages=(),
) -> LifeHistory:
    """One agent's life; identical to that agent's row in any cohort run with the same seed."""
    return simulate_cohort([a0], [z0], hp, chain, re_policy, prices, prefs, Streams(seed, [agent_id]), snapshot_ages)


def with_overrides(hp: Hyperparameters, **kw) -> Hyperparameters:
    return replace(hp, **{k: v for k, v in kw.items() if v is not None})
