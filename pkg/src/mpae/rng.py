"""Deterministic, label-split random streams.

Every random draw in the package comes from a Philox4x64-10 counter-based
generator addressed by (seed, purpose label, sample index):

    key     = (seed << 64) | first 8 bytes (little-endian) of sha256(label)
    counter = sample_index << 128

Distinct labels and sample indices therefore select disjoint 2^128-value
blocks of one well-specified stream, so masks do not depend on batch
composition and any sample's randomness can be regenerated in isolation.
Floats are derived from the raw 64-bit words by fixed arithmetic (53-bit
mantissa shift, Box-Muller, rejection sampling), never from numpy's
distribution code, so streams survive numpy upgrades.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ValidationError

_TWO53_INV = 2.0 ** -53
_BUFFER_LEN = 256


def _label_word(label):
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


class SeedStream:
    """Sequential random stream for one (seed, label, sample_index) address."""

    def __init__(self, seed, label, sample_index=0):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ValidationError(f"seed must be in [0, 2**64), got {seed}")
        if sample_index < 0:
            raise ValidationError(f"sample_index must be >= 0, got {sample_index}")
        self.seed = seed
        self.label = label
        self.sample_index = int(sample_index)
        key = (seed << 64) | _label_word(label)
        self._bitgen = np.random.Philox(counter=self.sample_index << 128, key=key)
        self._buf = np.empty(0, dtype=np.uint64)
        self._buf_pos = 0

    def raw(self, count):
        """Next ``count`` raw uint64 words."""
        return self._bitgen.random_raw(count)

    def _next_raw(self):
        if self._buf_pos >= self._buf.size:
            self._buf = self.raw(_BUFFER_LEN)
            self._buf_pos = 0
        value = int(self._buf[self._buf_pos])
        self._buf_pos += 1
        return value

    def uniform(self, shape=()):
        """Uniform float64 in [0, 1): top 53 bits of each raw word."""
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out = (self.raw(size) >> np.uint64(11)).astype(np.float64) * _TWO53_INV
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=()):
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (size + 1) // 2
        raws = self.raw(2 * pairs)
        # u1 in (0, 1] keeps the log finite
        u1 = ((raws[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53_INV
        u2 = (raws[pairs:] >> np.uint64(11)).astype(np.float64) * _TWO53_INV
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:size]
        return out.reshape(shape) if shape else float(out[0])

    def below(self, bound):
        """One unbiased integer in [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ValidationError(f"bound must be positive, got {bound}")
        threshold = (2 ** 64 // bound) * bound
        while True:
            value = self._next_raw()
            if value < threshold:
                return value % bound

    def integers(self, count, bound):
        """``count`` unbiased integers in [0, bound)."""
        return np.array([self.below(bound) for _ in range(count)], dtype=np.int64)

    def permutation(self, n):
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
