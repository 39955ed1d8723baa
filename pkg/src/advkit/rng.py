"""Portable seeded random generator used everywhere determinism matters.

Every stochastic operation in the toolkit draws from this splitmix64
generator rather than from ``numpy.random``, so corrupted images, datasets,
attacks, and training runs are bit-reproducible across platforms and across
re-implementations in other languages. The full definition:

* state update:  ``state += 0x9E3779B97F4A7C15``  (mod 2**64)
* output: ``mix(state)`` where ``mix`` is the splitmix64 finalizer
  (xor-shift 30, multiply 0xBF58476D1CE4E5B9, xor-shift 27, multiply
  0x94D049BB133111EB, xor-shift 31)
* ``uniform`` maps a draw to [0, 1) via ``(u64 >> 11) * 2**-53``
* ``normal`` consumes exactly two draws and applies Box-Muller:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``
* ``randint(n)`` is ``u64 % n`` (modulo bias is irrelevant for n << 2**64)

The i-th output of a stream seeded with s is ``mix(s + (i+1)*GOLDEN)``,
which is what lets the vectorized array fills below produce the identical
sequence as repeated scalar calls.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & MASK64
    return x ^ (x >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, *parts) -> int:
    """Derive an independent child seed from ``seed`` and a tag tuple.

    Parts may be ints or strings; strings are hashed with FNV-1a so the
    result does not depend on the interpreter's hash randomization.
    """
    x = mix64((seed & MASK64) ^ 0xA5A5A5A55A5A5A5A)
    for part in parts:
        if isinstance(part, str):
            p = _fnv1a64(part.encode("utf-8"))
        else:
            p = int(part) & MASK64
        x = mix64(x ^ p)
    return x


class SplitMix64:
    """Sequential splitmix64 stream with vectorized bulk fills."""

    def __init__(self, seed: int):
        self._state = seed & MASK64
        self._drawn = 0
        self._seed = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        self._drawn += 1
        return mix64(self._state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        # route through the vectorized path so scalar and bulk draws can
        # never disagree in the last ulp (libm vs numpy SIMD)
        return float(self.normals(1)[0])

    def randint(self, bound: int) -> int:
        if bound <= 0:
            raise ValueError("randint bound must be positive")
        return self.next_u64() % bound

    def bit(self) -> int:
        return self.next_u64() & 1

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    # -- vectorized fills (identical streams to the scalar calls) --

    def _u64_array(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(self._drawn)
        with np.errstate(over="ignore"):
            x = np.uint64(self._seed) + idx * np.uint64(GOLDEN)
            x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
            x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
            x = x ^ (x >> np.uint64(31))
        self._drawn += n
        self._state = (self._seed + self._drawn * GOLDEN) & MASK64
        return x

    def uniforms(self, n: int) -> np.ndarray:
        return (self._u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        u = self.uniforms(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log(1.0 - u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
