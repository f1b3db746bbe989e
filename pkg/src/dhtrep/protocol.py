"""Pieces shared by the storage protocols: timeouts and per-fetch state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .store import DataItem

FOUND = "found"
NOT_FOUND = "not-found"
TIMEOUT = "timeout"


def timeout_policy(n: int) -> tuple[int, int]:
    """(round-trip timeout, recursive lookup timeout) in hops for an n-node ring."""
    if n < 2:
        raise ValueError("timeout policy needs at least two nodes")
    return 3, round(2 * math.log2(n))


@dataclass(frozen=True)
class Timeouts:
    rtt: int = 3
    recursive: int = 15

    @classmethod
    def for_size(cls, n: int, rtt: int | None = None, recursive: int | None = None) -> Timeouts:
        r0, r1 = timeout_policy(n)
        return cls(rtt if rtt is not None else r0, recursive if recursive is not None else r1)


@dataclass
class FetchState:
    """Progress of one client fetch across attempts and retries."""

    origin: int
    key: int
    latency: int = 0
    probes: int = 0
    timeouts: int = 0
    resets: int = 0
    pending: list[int] | None = None
    item: DataItem | None = None
    trail: list[str] = field(default_factory=list)

    @property
    def retries(self) -> int:
        return self.timeouts + self.resets
