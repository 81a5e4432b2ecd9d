"""Counter-based random numbers keyed by (seed, stream, index, draw).

Every value is a pure function of its key, so samples can be generated in any
order (or in parallel) and still come out identical.  The mixer is SplitMix64's
finalizer applied to a combined 64-bit key; all arithmetic is on uint64 arrays
and wraps modulo 2**64.
"""

from __future__ import annotations

import zlib

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def stream_id(name: str) -> int:
    """Stable 32-bit id for a named stream."""
    return zlib.crc32(name.encode())


def bits(seed: int, stream: int | str, index, n_draws: int) -> np.ndarray:
    """Raw 64-bit words, shape ``index.shape + (n_draws,)``."""
    if isinstance(stream, str):
        stream = stream_id(stream)
    idx = np.asarray(index, dtype=np.uint64)[..., None]
    draw = np.arange(n_draws, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix(np.full(1, (seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64) * _GOLDEN
                   + np.uint64(stream))
        z = _mix(key + idx * _GOLDEN)
        return _mix(z + (draw + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, stream, index, n_draws: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), 53-bit resolution."""
    b = bits(seed, stream, index, n_draws) >> np.uint64(11)
    return (b.astype(np.float64) + 0.5) / 9007199254740992.0


def normal(seed: int, stream, index, n_draws: int) -> np.ndarray:
    """Standard normals by Box-Muller on paired uniforms."""
    half = (n_draws + 1) // 2
    u = uniform(seed, stream, index, 2 * half)
    u1, u2 = u[..., :half], u[..., half:]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)], axis=-1)
    return out[..., :n_draws]


class CounterRNG:
    """Convenience wrapper binding a seed; streams are named per purpose."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def uniform(self, stream, index, n_draws: int = 1) -> np.ndarray:
        return uniform(self.seed, stream, index, n_draws)

    def normal(self, stream, index, n_draws: int = 1) -> np.ndarray:
        return normal(self.seed, stream, index, n_draws)

    def permutation(self, stream, n: int) -> np.ndarray:
        keys = bits(self.seed, stream, np.arange(n), 1)[:, 0]
        return np.argsort(keys, kind="stable")
