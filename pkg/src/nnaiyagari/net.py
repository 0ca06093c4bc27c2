"""Small ReLU perceptrons with analytic gradients, Adam ascent and Polyak targets.

All arrays carry a leading agent axis so a whole cohort is updated at once; a
single network is simply a batch of one. Weights have shape (agents, out, in).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .economy import Prices
from .markov import ParameterError
from .streams import INIT_WEIGHTS, Streams, counter

NO_CLIP, FLOOR_CLIP, CAP_CLIP, CMIN_CLIP = 0, 1, 2, 3


class CorruptionError(FloatingPointError):
    """Raised when a network parameter or gradient is not finite."""


@dataclass(eq=False)
class Mlp:
    weights: list
    biases: list

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[2],) + tuple(W.shape[1] for W in self.weights)

    @property
    def n_agents(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list:
        """Parameter arrays in a fixed order: W1, b1, W2, b2, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def select(self, idx) -> "Mlp":
        return Mlp([W[idx] for W in self.weights], [b[idx] for b in self.biases])

    def check_finite(self):
        if not all(np.all(np.isfinite(p)) for p in self.params()):
            raise CorruptionError("non-finite network parameter")

    def to_flat(self, agent: int = 0) -> tuple[dict, np.ndarray]:
        header = {"layer_sizes": list(self.layer_sizes), "order": "W1,b1,W2,b2,... row-major (out, in)"}
        vec = np.concatenate([p[agent].ravel() for p in self.params()])
        return header, vec

    @classmethod
    def from_flat(cls, header: dict, vec) -> "Mlp":
        sizes = header["layer_sizes"]
        vec = np.asarray(vec, dtype=float)
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(vec[pos : pos + n_in * n_out].reshape(1, n_out, n_in))
            pos += n_in * n_out
            biases.append(vec[pos : pos + n_out].reshape(1, n_out))
            pos += n_out
        if pos != vec.size:
            raise ParameterError(f"flat vector has {vec.size} entries, header implies {pos}")
        return cls(weights, biases)


def dump_snapshot(net: Mlp, agent: int = 0) -> str:
    header, vec = net.to_flat(agent)
    return json.dumps({"header": header, "params": vec.tolist()})


def load_snapshot(text: str) -> Mlp:
    obj = json.loads(text)
    return Mlp.from_flat(obj["header"], obj["params"])


def n_params(layer_sizes) -> int:
    return sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_weights(layer_sizes, rng, n_agents: int | None = None) -> Mlp:
    """Uniform on +-1/sqrt(fan_in) for every weight and bias of a layer.

    ``rng`` is either a numpy Generator (``n_agents`` networks, default one) or a
    :class:`Streams` batch (one network per stream).
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ParameterError(f"invalid layer sizes {layer_sizes}")
    total = n_params(sizes)
    if isinstance(rng, Streams):
        u = rng.uniform(counter(0, 0, INIT_WEIGHTS), total)
    else:
        u = rng.random((1 if n_agents is None else n_agents, total))
    A = u.shape[0]
    weights, biases, pos = [], [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        w = u[:, pos : pos + n_in * n_out]
        pos += n_in * n_out
        b = u[:, pos : pos + n_out]
        pos += n_out
        weights.append(((2.0 * w - 1.0) * bound).reshape(A, n_out, n_in))
        biases.append((2.0 * b - 1.0) * bound)
    return Mlp(weights, biases)


def zeros_like_net(layer_sizes, n_agents: int = 1) -> Mlp:
    sizes = list(layer_sizes)
    return Mlp(
        [np.zeros((n_agents, o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros((n_agents, o)) for o in sizes[1:]],
    )


def _inputs(a, z):
    a = np.asarray(a, dtype=float)
    z = np.broadcast_to(np.asarray(z, dtype=float), a.shape)
    squeeze = a.ndim == 1
    if squeeze:
        a, z = a[:, None], z[:, None]
    return np.stack([a, z], axis=-1), squeeze


def forward_cache(net: Mlp, a, z):
    """Forward pass keeping layer activations. ``a``, ``z``: (agents,) or (agents, K)."""
    x, squeeze = _inputs(a, z)
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        s = np.matmul(h, np.swapaxes(W, 1, 2)) + b[:, None, :]
        if l < last:
            pre.append(s)
            h = np.maximum(s, 0.0)
            acts.append(h)
        else:
            h = s
    out = h[..., 0]
    return (out[:, 0] if squeeze else out), (acts, pre, squeeze)


def forward(net: Mlp, a, z):
    out, _ = forward_cache(net, a, z)
    if not np.all(np.isfinite(out)):
        net.check_finite()
    return out


def backward(net: Mlp, cache, dout) -> list:
    """Vector-Jacobian product: gradient of sum_k dout[k] * phi_k, in ``params()`` order."""
    acts, pre, squeeze = cache
    g = np.asarray(dout, dtype=float)
    g = g[:, None, None] if squeeze else g[..., None]  # (A, K, 1)
    grads = [None] * (2 * len(net.weights))
    for l in range(len(net.weights) - 1, -1, -1):
        h_prev = acts[l]
        grads[2 * l] = np.matmul(np.swapaxes(g, 1, 2), h_prev)
        grads[2 * l + 1] = g.sum(axis=1)
        if l > 0:
            g = np.matmul(g, net.weights[l]) * (pre[l - 1] > 0.0)
    return grads


def grad_params(net: Mlp, a, z) -> list:
    """Gradient of the scalar output at one input per agent, in ``params()`` order."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    _, cache = forward_cache(net, a, z)
    return backward(net, cache, np.ones(a.shape))


@dataclass(eq=False)
class PolicyParams:
    network: Mlp
    target: Mlp
    mu: float = 0.01
    a_floor: float = 0.0
    a_cap: float = 50.0
    c_min: float = 0.1
    polyak_lambda: float = 0.01

    def __post_init__(self):
        if not self.a_floor < self.a_cap:
            raise ParameterError("a_floor must be below a_cap")
        if not self.mu > 0:
            raise ParameterError("mu must be positive")
        if not 0 < self.polyak_lambda <= 1:
            raise ParameterError("polyak_lambda must lie in (0, 1]")
        if not self.c_min > 0:
            raise ParameterError("c_min must be positive")


def clip_action(p: PolicyParams, a, z, x, prices: Prices):
    """Apply the floor, cap and minimum-consumption clips in that order."""
    flag = np.zeros(np.shape(x), dtype=np.int8)
    low = x < p.a_floor
    x = np.where(low, p.a_floor, x)
    flag[low] = FLOOR_CLIP
    high = x > p.a_cap
    x = np.where(high, p.a_cap, x)
    flag[high] = CAP_CLIP
    coh = prices.gross * a + prices.w * z
    starve = coh - x < p.c_min
    x = np.where(starve, coh - p.c_min, x)
    flag[starve] = CMIN_CLIP
    return x, flag


def policy_action(p: PolicyParams, a, z, prices: Prices, use_target: bool = False):
    """Next-period assets a + mu*phi(a, z), clipped; returns (x, clip flag)."""
    net = p.target if use_target else p.network
    a = np.asarray(a, dtype=float)
    x = a + p.mu * forward(net, a, z)
    return clip_action(p, a, np.broadcast_to(z, a.shape), x, prices)


@dataclass(eq=False)
class AdamState:
    m: list
    v: list
    step_count: int = 0
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, alpha: float = 0.01, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()], alpha=alpha, **kw)


def adam_ascent_step(net: Mlp, state: AdamState, gradient: list):
    """One bias-corrected Adam step in the +gradient direction; updates in place."""
    if len(gradient) != len(state.m):
        raise ParameterError("gradient does not match the network")
    if not all(np.all(np.isfinite(g)) for g in gradient):
        raise CorruptionError("non-finite gradient; step rejected")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(net.params(), gradient, state.m, state.v):
        if g.shape != p.shape:
            raise ParameterError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p += state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def polyak_update(target: Mlp, source: Mlp, lam: float) -> Mlp:
    """target <- (1 - lam) * target + lam * source, in place."""
    for t, s in zip(target.params(), source.params()):
        if t.shape != s.shape:
            raise ParameterError(f"shape mismatch {t.shape} vs {s.shape}")
        t += lam * (s - t)
    return target
