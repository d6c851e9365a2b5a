"""Counter-based pseudorandom streams.

Every random number in the package is a pure function of a 64-bit key and
an integer counter, so results never depend on evaluation order, batching
or thread count.  The mixer is the SplitMix64 finalizer applied to
``key + counter * GOLDEN``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(GOLDEN)
_INV_2_53 = 1.0 / (1 << 53)

# Domain-separation tags for derived keys.
TAG_TRIAL = 0x7472_6961_6C00_0001
TAG_ENV = 0x656E_7669_726F_0002
TAG_START = 0x7374_6172_7400_0003
TAG_SITE = 0x7369_7465_0000_0004


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def derive_key(*words: int) -> int:
    """Fold integers (negative allowed) into one 64-bit key."""
    h = 0x6A09E667F3BCC909
    for w in words:
        h = mix64((h ^ (int(w) & MASK64)) + GOLDEN)
    return h


def hash_sites(key: int | np.ndarray, sites: np.ndarray) -> np.ndarray:
    """Hash integer coordinates ``sites`` (shape (..., d)) under ``key``.

    ``key`` may be a scalar or an array broadcastable to ``sites.shape[:-1]``.
    """
    sites = np.asarray(sites, dtype=np.int64)
    h = np.asarray(key, dtype=np.uint64) ^ np.uint64(0x6A09E667F3BCC909)
    h = np.broadcast_to(h, sites.shape[:-1]).copy()
    with np.errstate(over="ignore"):
        for i in range(sites.shape[-1]):
            h = mix64_array((h ^ sites[..., i].view(np.uint64)) + _GOLDEN)
    return h


def to_unit(h: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles in [0, 1) using the top 53 bits."""
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53


def stream_uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """The ``counter``-th uniform of each stream in ``keys``."""
    with np.errstate(over="ignore"):
        z = keys + np.uint64((counter * GOLDEN) & MASK64)
    return to_unit(mix64_array(z))


class Stream:
    """A single reproducible uniform stream, addressed by counter.

    ``Stream(seed, trial)`` is the stream of one trial; draws advance an
    internal counter but any draw can be recomputed with :meth:`at`.
    """

    def __init__(self, seed: int, trial: int = 0):
        self.seed = int(seed)
        self.trial = int(trial)
        self.key = derive_key(seed, TAG_TRIAL, trial)
        self.counter = 0

    def at(self, counter: int) -> float:
        return float(stream_uniforms(np.array([self.key], dtype=np.uint64), counter)[0])

    def uniform(self) -> float:
        u = self.at(self.counter)
        self.counter += 1
        return u

    def __repr__(self):
        return f"Stream(seed={self.seed}, trial={self.trial}, counter={self.counter})"


def trial_keys(seed: int, trials: np.ndarray) -> np.ndarray:
    """Stream keys for a batch of trials; agrees with ``Stream(seed, t).key``."""
    return np.array([derive_key(seed, TAG_TRIAL, int(t)) for t in trials], dtype=np.uint64)
