"""
Portable seeded random numbers.

xoshiro256** seeded through SplitMix64, so the exact same streams can be
regenerated in any language:

    state[0..3] = four consecutive SplitMix64 outputs of the seed
    uniform     = (next_u64() >> 11) * 2**-53                  in [0, 1)
    normal      = Box-Muller on a pair (u1, u2) of uniforms:
                  r = sqrt(-2 ln(1 - u1)),  z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)

Arrays are filled in row-major order; normals consume uniforms pairwise and
use both outputs of each pair.
"""
import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One SplitMix64 step. Returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def derive_seed(*parts):
    """Mix several integers into one 64-bit seed (order sensitive)."""
    h = 0x6A09E667F3BCC908
    for p in parts:
        h, out = splitmix64((h ^ (int(p) & _MASK)) & _MASK)
        h = out
    return h


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** generator with numpy-friendly bulk helpers."""

    def __init__(self, seed):
        if seed is None:
            raise ValueError("an explicit seed is required")
        x = int(seed) & _MASK
        s = []
        for _ in range(4):
            x, out = splitmix64(x)
            s.append(out)
        self._s = s

    @classmethod
    def from_state(cls, state):
        """Generator with an explicit 4-word state (for test vectors)."""
        g = cls.__new__(cls)
        g._s = [int(w) & _MASK for w in state]
        return g

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def u64_array(self, n):
        nxt = self.next_u64
        return np.array([nxt() for _ in range(n)], dtype=np.uint64)

    def random(self, shape=()):
        """Uniform doubles in [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(shape)

    def uniform(self, low, high, shape=()):
        return low + (high - low) * self.random(shape)

    def normal(self, shape=()):
        """Standard normal samples via Box-Muller."""
        n = int(np.prod(shape, dtype=np.int64))
        npairs = (n + 1) // 2
        u = self.random((npairs, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((npairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n].reshape(shape)
