"""Counter-based random streams keyed by (seed, generation, agent id).

Every draw is a pure function of its key and a counter, so results do not depend
on how agents are batched or scheduled across workers. The mixing function is
the SplitMix64 finalizer applied to a Weyl-sequenced counter.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / (1 << 53)

# purposes: low 4 bits of the counter
Z_DRAW = 0
N_EXTERNAL = 1
EXT_A = 2
EXT_Z = 3
EXT_ZNEXT = 4
MEMORY = 5
INIT_WEIGHTS = 6
INITIAL_STATE = 7
INHERIT_Z = 8


def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def agent_keys(seed: int, agent_ids, generation: int = 1) -> np.ndarray:
    ids = np.asarray(agent_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(generation))
        return _mix(k ^ _mix(ids * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))


def counter(period: int, step: int, purpose: int) -> int:
    """Pack (period, learning step, purpose) into one 64-bit counter."""
    return ((period << 24 | step) << 4) | purpose


class Streams:
    """Uniform draws for a batch of agents; row i belongs to agent ``ids[i]``."""

    def __init__(self, seed: int, agent_ids, generation: int = 1):
        self.seed = int(seed)
        self.ids = np.asarray(agent_ids, dtype=np.int64)
        self.generation = int(generation)
        self.keys = agent_keys(self.seed, self.ids, self.generation)

    def __len__(self):
        return self.keys.size

    def subset(self, idx) -> "Streams":
        out = Streams.__new__(Streams)
        out.seed, out.generation = self.seed, self.generation
        out.ids = self.ids[idx]
        out.keys = self.keys[idx]
        return out

    def uniform(self, ctr: int, n: int | None = None) -> np.ndarray:
        """Uniforms on [0, 1): shape (agents,) if ``n`` is None else (agents, n)."""
        width = 1 if n is None else n
        base = np.uint64(ctr) * np.uint64(1 << 16)
        slots = base + np.arange(width, dtype=np.uint64)
        with np.errstate(over="ignore"):
            x = _mix(self.keys[:, None] + (slots[None, :] + np.uint64(1)) * _GOLDEN)
            x = _mix(x ^ self.keys[:, None])
        u = (x >> np.uint64(11)).astype(np.float64) * _INV53
        return u[:, 0] if n is None else u

    def normal(self, ctr: int, n: int) -> np.ndarray:
        from scipy.special import ndtri

        u = self.uniform(ctr, n)
        return ndtri(np.clip(u, _INV53, 1.0 - _INV53))
