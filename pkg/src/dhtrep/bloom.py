"""Bloom filter used to summarise a node's items for peripheral checks."""

from __future__ import annotations

import math
from typing import Iterable

from .allocation import splitmix64


class BloomSummary:
    def __init__(self, n_items: int, bits_per_item: int = 10, k: int = 7):
        if bits_per_item < 1 or k < 1:
            raise ValueError("bits_per_item and k must be positive")
        self.m_bits = max(8, n_items * bits_per_item)
        self.k = k
        self.count = 0
        self._bits = bytearray((self.m_bits + 7) // 8)

    @classmethod
    def of(cls, keys: Iterable[int], bits_per_item: int = 10, k: int = 7) -> BloomSummary:
        keys = list(keys)
        bloom = cls(len(keys), bits_per_item, k)
        for key in keys:
            bloom.add(key)
        return bloom

    def _positions(self, key: int):
        h = splitmix64(key)
        h1 = h & 0xFFFFFFFF
        h2 = (h >> 32) | 1
        m = self.m_bits
        return [(h1 + i * h2) % m for i in range(self.k)]

    def add(self, key: int) -> None:
        for p in self._positions(key):
            self._bits[p >> 3] |= 1 << (p & 7)
        self.count += 1

    def __contains__(self, key: int) -> bool:
        bits = self._bits
        return all(bits[p >> 3] & (1 << (p & 7)) for p in self._positions(key))

    @property
    def size_bytes(self) -> int:
        return len(self._bits)

    def expected_fp_rate(self) -> float:
        return (1.0 - math.exp(-self.k * self.count / self.m_bits)) ** self.k
