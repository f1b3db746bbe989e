"""Message kinds, bandwidth categories and byte sizes."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

HEADER_BYTES = 40
DIGEST_BYTES = 24
NODE_REF_BYTES = 8
DEFAULT_ITEM_BYTES = 1024

OVERHEAD = "maintenance-overhead"
DATA = "data-movement"
REPAIR = "chord-repair"
FETCH = "fetch"
CATEGORIES = (OVERHEAD, DATA, REPAIR, FETCH)

KINDS = (
    "lookup",
    "get",
    "recursive-get",
    "synchronize-summary",
    "data-transfer",
    "bloom-summary",
    "chord-repair",
    "offer",
)


def summary_bytes(n_digests: int) -> int:
    return HEADER_BYTES + DIGEST_BYTES * n_digests


def node_list_bytes(n_refs: int) -> int:
    return HEADER_BYTES + NODE_REF_BYTES * n_refs


def bloom_bytes(n_items: int, bits_per_item: int) -> int:
    return HEADER_BYTES + math.ceil(n_items * bits_per_item / 8)


@dataclass(frozen=True, slots=True)
class Message:
    time: float
    kind: str
    src: int
    dst: int
    size: int
    category: str


@dataclass
class Traffic:
    """Per-category byte counters and per-kind message counts.

    Only delivered messages are counted. When `trace` is a list every
    delivered message is appended to it as well.
    """

    bytes: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    counts: Counter = field(default_factory=Counter)
    trace: list[Message] | None = None

    def record(self, time: float, kind: str, src: int, dst: int, size: int, category: str) -> None:
        self.bytes[category] += size
        self.counts[kind] += 1
        if self.trace is not None:
            self.trace.append(Message(time, kind, src, dst, size, category))

    def reset(self) -> None:
        self.bytes = dict.fromkeys(CATEGORIES, 0)
        self.counts = Counter()
        if self.trace is not None:
            self.trace.clear()
