"""Counter-based SplitMix64 random streams.

Output ``k`` of stream ``(seed, stream)`` is SplitMix64's finaliser applied to
``seed + GOLDEN * (stream * 2**32 + k + 1)`` (mod 2**64), i.e. the k-th output
of a SplitMix64 generator whose state starts at ``seed + GOLDEN * stream * 2**32``.
Uniforms take the top 53 bits; normals use Box-Muller on consecutive pairs.
Everything is plain 64-bit integer arithmetic, so streams are reproducible in
any language.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed, stream, n):
    """``n`` raw uint64 outputs of the given stream."""
    with np.errstate(over="ignore"):
        base = np.uint64(seed) + GOLDEN * (np.uint64(stream) << np.uint64(32))
        z = base + GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def uniform(seed, stream, n, low=0.0, high=1.0):
    """Uniform doubles in ``[low, high)``."""
    u = (splitmix64(seed, stream, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return low + (high - low) * u


def normal(seed, stream, n):
    """Standard normal doubles via Box-Muller."""
    m = (n + 1) // 2
    u = uniform(seed, stream, 2 * m)
    u1 = 1.0 - u[0::2]  # in (0, 1], safe for log
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return out[:n]
