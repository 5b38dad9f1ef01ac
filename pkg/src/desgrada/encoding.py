"""Bernoulli rate encoding with a counter-based generator.

Every spike ``values[t, v, j]`` is decided by a uniform derived from a
SplitMix64 hash of ``(seed, t, v, j)``, so any element can be drawn
independently of the others and evaluation order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, *counters: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) keyed by ``seed`` and broadcast integer counters."""
    with np.errstate(over="ignore"):
        z = _mix(np.asarray(np.uint64(seed % 2**64)))
        for c in counters:
            z = _mix(z ^ np.asarray(c, dtype=np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def derive_seed(*parts: int) -> int:
    """Fold several integers into one 64-bit seed."""
    with np.errstate(over="ignore"):
        z = _mix(np.asarray(np.uint64(0)))
        for p in parts:
            z = _mix(z ^ np.uint64(int(p) % 2**64))
    return int(z)


@dataclass(frozen=True, eq=False)
class SpikeTensor:
    values: np.ndarray  # uint8 [T x n x f]
    T: int
    seed: int


def bernoulli_probs_encode(probs: np.ndarray, T: int, seed: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if T < 1:
        raise ValueError("T must be >= 1")
    if probs.size and (np.isnan(probs).any() or probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("spike probabilities must lie in [0, 1]")
    n, f = probs.shape
    t_idx = np.arange(T, dtype=np.uint64)[:, None, None]
    v_idx = np.arange(n, dtype=np.uint64)[None, :, None]
    j_idx = np.arange(f, dtype=np.uint64)[None, None, :]
    u = counter_uniform(seed, t_idx, v_idx, j_idx)
    return (u < probs[None]).astype(np.uint8)


def bernoulli_encode(g: Graph, T: int, seed: int) -> SpikeTensor:
    """Sample ``T`` binary frames with ``P(spike) = features``."""
    return SpikeTensor(bernoulli_probs_encode(g.features, T, seed), T, seed)
