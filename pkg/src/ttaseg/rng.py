"""Deterministic, seedable pseudorandom number generation.

The generator is xoshiro256++ seeded through the splitmix64 expander, with
doubles built by the 53-bit mantissa method. Everything is integer
arithmetic on 64-bit words, so a given seed produces the identical sequence
on every platform and Python build.

Independent streams come from :func:`derive_stream`: the child seed is a
splitmix64-style hash of (base_seed, index), so stream k can be created in
any order, on any thread, and always yields the same sequence.
"""

import math

import numpy as np

from . import kernels

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15   # splitmix64 state increment
_DERIVE = 0xD1B54A32D192ED03   # odd constant separating derived-stream inputs


def _mix64(z):
    """splitmix64 output function (Vigna's public-domain finalizer)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Rng:
    """xoshiro256++ generator with reproducible stream derivation.

    Each instance is a single sequential stream and must stay confined to
    one thread; use :meth:`derive` / :func:`derive_stream` to hand
    independent streams to concurrent work.
    """

    __slots__ = ("seed", "_s", "_spare_normal")

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm = (sm + _GOLDEN) & MASK64
            s.append(_mix64(sm))
        self._s = s
        self._spare_normal = None

    def next_u64(self):
        """Next raw 64-bit output."""
        s0, s1, s2, s3 = self._s
        tot = (s0 + s3) & MASK64
        result = (((tot << 23) | (tot >> 41)) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, lo, hi):
        """Uniform double on [lo, hi); returns lo exactly when lo == hi."""
        if not (lo <= hi):
            raise ValueError(f"uniform requires lo <= hi, got {lo} > {hi}")
        x = (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)
        return lo + x * (hi - lo)

    def fill_uniform(self, n):
        """n uniform doubles on [0, 1) as an ndarray (backend-accelerated)."""
        state = np.array(self._s, dtype=np.uint64)
        out = kernels.fill_uniform(state, int(n))
        self._s = [int(v) for v in state]
        return out

    def normal(self, mu=0.0, sigma=1.0):
        """One Gaussian draw via Box-Muller (the spare value is cached)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return mu + sigma * z
        u1 = 1.0 - self.uniform(0.0, 1.0)  # (0, 1]; keeps log finite
        u2 = self.uniform(0.0, 1.0)
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * (r * math.cos(2.0 * math.pi * u2))

    def fill_normal(self, n, mu=0.0, sigma=1.0):
        """n Gaussian draws as an ndarray.

        Consumes exactly 2*ceil(n/2) uniforms; any unused spare is
        discarded, independently of the scalar :meth:`normal` cache.
        """
        pairs = (int(n) + 1) // 2
        u = self.fill_uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        ang = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return mu + sigma * out[:n]

    def randrange(self, n):
        """Integer in [0, n). Uses the 64-bit output modulo n; the modulo
        bias is below 2**-40 for any n this package uses (shuffles, picks).
        """
        if n <= 0:
            raise ValueError("randrange requires n >= 1")
        return self.next_u64() % n

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a mutable sequence."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def derive(self, index):
        """Child stream for (this stream's seed, index)."""
        return derive_stream(self.seed, index)


def derive_stream(base_seed, index):
    """Independent generator determined only by (base_seed, index).

    The child seed is the splitmix64 finalizer applied to
    base_seed + (index + 1) * odd-constant, so distinct indices always give
    distinct seeds and querying order is irrelevant.
    """
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    base = int(base_seed) & MASK64
    child = _mix64((base + ((index + 1) * _DERIVE)) & MASK64)
    return Rng(child)
