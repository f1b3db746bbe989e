"""Replica location functions h(m, d) for dynamic replica enumeration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

KINDS = ("successor", "predecessor", "block", "finger", "random")
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def spare_indices(r_min: int) -> int:
    """Peripheral indices needed to absorb collisions 95% of the time."""
    return math.ceil(1.645 * math.sqrt(r_min))


@dataclass(frozen=True)
class AllocationConfig:
    kind: str
    K: int
    N: int
    r_min: int
    r_max: int
    seed: int = 0  # keys the `random` kind
    check_spare: bool = True
    offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown allocation kind {self.kind!r}")
        if not 1 <= self.r_min <= self.r_max:
            raise ValueError("need 1 <= r_min <= r_max")
        if self.N < 1 or self.K < self.N:
            raise ValueError("need 1 <= N <= K")
        if (
            self.check_spare
            and self.kind in ("successor", "predecessor", "block")
            and self.r_max - self.r_min < spare_indices(self.r_min)
        ):
            raise ValueError(
                f"{self.kind} allocation needs r_max - r_min >= {spare_indices(self.r_min)}"
            )
        object.__setattr__(self, "offsets", tuple(self._offset(m) for m in range(1, self.r_max + 1)))

    @property
    def unit(self) -> int:
        return self.K // self.N

    @property
    def block(self) -> int:
        return self.unit * self.r_max

    def _offset(self, m: int) -> int:
        u = self.unit
        K = self.K
        if self.kind in ("successor", "block"):
            return (m * u) % K
        if self.kind == "predecessor":
            return (-m * u) % K
        if self.kind == "finger":
            # 2^(m + log2(K/N)) without rounding the exponent
            return ((1 << m) * K // self.N) % K
        return splitmix64(self.seed * 1_000_003 + m) % K

    def deltas(self) -> tuple[int, ...]:
        """h(m, d) - h(1, d) for m = 1..r_max; constant in d for every kind."""
        o1 = self.offsets[0]
        return tuple((o - o1) % self.K for o in self.offsets)


def allocate(cfg: AllocationConfig, m: int, d: int) -> int:
    if not 1 <= m <= cfg.r_max:
        raise ValueError(f"index {m} outside 1..{cfg.r_max}")
    K = cfg.K
    if cfg.kind == "block":
        u = cfg.unit
        B = cfg.block
        return (d - d % B + d % u + m * u) % K
    return (d + cfg.offsets[m - 1]) % K


def anchor(cfg: AllocationConfig, d: int) -> int:
    return allocate(cfg, 1, d)


def replica_locations(cfg: AllocationConfig, d: int) -> list[tuple[int, int]]:
    return [(m, allocate(cfg, m, d)) for m in range(1, cfg.r_max + 1)]


class ReplicaRole(Enum):
    OWNER = "owner"
    CORE = "core"
    PERIPHERAL = "peripheral"


def classify(cfg: AllocationConfig, m: int) -> ReplicaRole:
    if not 1 <= m <= cfg.r_max:
        raise ValueError(f"index {m} outside 1..{cfg.r_max}")
    if m == 1:
        return ReplicaRole.OWNER
    return ReplicaRole.CORE if m <= cfg.r_min else ReplicaRole.PERIPHERAL
