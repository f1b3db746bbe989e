"""Local replica stores, a global holder index, arc sets and the sync exchange."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from sortedcontainers import SortedList

from .messages import DATA, HEADER_BYTES, OVERHEAD, summary_bytes


@dataclass(frozen=True, slots=True)
class DataItem:
    key: int
    anchor: int  # ring position that decides placement (the key itself for DHash)
    size: int
    version: int = 0


@dataclass(frozen=True)
class SyncSummary:
    """Digest set for a list of arcs; `byte_cost` is what goes on the wire."""

    arcs: tuple[tuple[int, int], ...]
    digests: frozenset[tuple[int, int]]

    @property
    def byte_cost(self) -> int:
        return summary_bytes(len(self.digests))


class HolderIndex:
    """Global key -> live holders map. Only oracles and metrics read it."""

    def __init__(self, on_loss: Callable[[int], None] | None = None):
        self.holders: dict[int, set[int]] = {}
        self.on_loss = on_loss

    def add(self, key: int, node_id: int) -> None:
        self.holders.setdefault(key, set()).add(node_id)

    def remove(self, key: int, node_id: int, failure: bool = False) -> None:
        hs = self.holders.get(key)
        if hs is None:
            return
        hs.discard(node_id)
        if not hs:
            del self.holders[key]
            if self.on_loss is not None:
                self.on_loss(key)

    def count(self, key: int) -> int:
        hs = self.holders.get(key)
        return len(hs) if hs else 0

    def __contains__(self, key: int) -> bool:
        return key in self.holders


class ReplicaStore:
    """Items held by one node, indexed by key and by anchor position."""

    __slots__ = ("node_id", "K", "_items", "_index", "orphaned", "_registry")

    def __init__(self, node_id: int, K: int, registry: HolderIndex | None = None):
        self.node_id = node_id
        self.K = K
        self._items: dict[int, DataItem] = {}
        self._index = SortedList()
        self.orphaned: dict[int, float] = {}
        self._registry = registry

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, key: int) -> bool:
        return key in self._items

    def get(self, key: int) -> DataItem | None:
        return self._items.get(key)

    def keys(self):
        return self._items.keys()

    def items(self):
        return self._items.values()

    def put(self, item: DataItem) -> bool:
        """Store `item` unless an equal or newer version is present."""
        old = self._items.get(item.key)
        if old is not None:
            if old.version >= item.version:
                return False
            self._items[item.key] = item
            return True
        self._items[item.key] = item
        self._index.add((item.anchor, item.key))
        if self._registry is not None:
            self._registry.add(item.key, self.node_id)
        return True

    def remove(self, key: int) -> DataItem | None:
        item = self._items.pop(key, None)
        if item is None:
            return None
        self._index.remove((item.anchor, key))
        self.orphaned.pop(key, None)
        if self._registry is not None:
            self._registry.remove(key, self.node_id)
        return item

    def drop_all(self) -> None:
        """The node failed: its data is gone."""
        if self._registry is not None:
            for key in self._items:
                self._registry.remove(key, self.node_id, failure=True)
        self._items.clear()
        self._index.clear()
        self.orphaned.clear()

    def in_interval(self, lo: int, hi: int) -> list[DataItem]:
        """Items whose anchor lies in the closed interval [lo, hi] (no wrap)."""
        items = self._items
        return [items[k] for _, k in self._index.irange((lo, -1), (hi, self.K))]

    def in_arc(self, start: int, end: int) -> list[DataItem]:
        """Items whose anchor lies in the clockwise arc (start, end]."""
        out: list[DataItem] = []
        for lo, hi in arc_intervals(start, end, self.K):
            out.extend(self.in_interval(lo, hi))
        return out

    def in_arcs(self, arcs: Iterable[tuple[int, int]]) -> dict[int, DataItem]:
        out: dict[int, DataItem] = {}
        for start, end in arcs:
            for it in self.in_arc(start, end):
                out[it.key] = it
        return out

    def bytes(self) -> int:
        return sum(it.size for it in self._items.values())

    def servable(self, key: int) -> DataItem | None:
        if key in self.orphaned:
            return None
        return self._items.get(key)


# -- arc sets -----------------------------------------------------------------


def arc_intervals(start: int, end: int, K: int) -> list[tuple[int, int]]:
    """Closed integer intervals covering the arc (start, end]."""
    if start == end:
        return [(0, K - 1)]
    lo = (start + 1) % K
    if lo <= end:
        return [(lo, end)]
    return [(lo, K - 1), (0, end)]


def merge_intervals(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1] + 1:
            if hi > out[-1][1]:
                out[-1][1] = hi
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def complement_intervals(intervals: list[tuple[int, int]], K: int) -> list[tuple[int, int]]:
    """Complement in [0, K-1] of merged, sorted intervals."""
    out = []
    cur = 0
    for lo, hi in intervals:
        if lo > cur:
            out.append((cur, lo - 1))
        cur = max(cur, hi + 1)
    if cur <= K - 1:
        out.append((cur, K - 1))
    return out


def union_of_arcs(arcs: Iterable[tuple[int, int]], K: int) -> list[tuple[int, int]]:
    pieces: list[tuple[int, int]] = []
    for s, e in arcs:
        pieces.extend(arc_intervals(s, e, K))
    return merge_intervals(pieces)


# -- synchronisation ------------------------------------------------------------


@dataclass
class SyncStats:
    summaries: int = 0
    moved: int = 0
    moved_keys: list[int] = field(default_factory=list)


def _newer(a: DataItem | None, b: DataItem) -> bool:
    return a is None or a.version < b.version


def sync_pull(ring, root, holder_id: int, arcs, stats: SyncStats | None = None) -> int:
    """Gather pass: `root` summarises its items in `arcs`; the holder sends what root lacks."""
    mine = root.store.in_arcs(arcs)
    if not ring.send("synchronize-summary", root.id, holder_id, summary_bytes(len(mine)), OVERHEAD):
        return 0
    if stats is not None:
        stats.summaries += 1
    holder = ring.nodes[holder_id]
    moved = 0
    for key, it in holder.store.in_arcs(arcs).items():
        if _newer(mine.get(key), it):
            ring.send("data-transfer", holder_id, root.id, HEADER_BYTES + it.size, DATA)
            root.store.put(it)
            moved += 1
            if stats is not None:
                stats.moved_keys.append(key)
    if stats is not None:
        stats.moved += moved
    return moved


def sync_push(ring, root, holder_id: int, arcs, stats: SyncStats | None = None) -> int:
    """Distribute pass: the holder answers root's summary with the digests it lacks."""
    mine = root.store.in_arcs(arcs)
    if not ring.send("synchronize-summary", root.id, holder_id, summary_bytes(len(mine)), OVERHEAD):
        return 0
    if stats is not None:
        stats.summaries += 1
    holder = ring.nodes[holder_id]
    hstore = holder.store
    lacking = []
    for key, it in mine.items():
        have = hstore.get(key)
        if _newer(have, it):
            lacking.append(it)
        elif key in hstore.orphaned:
            del hstore.orphaned[key]
    if lacking:
        ring.send("synchronize-summary", holder_id, root.id, summary_bytes(len(lacking)), OVERHEAD)
        for it in lacking:
            ring.send("data-transfer", root.id, holder_id, HEADER_BYTES + it.size, DATA)
            hstore.put(it)
            hstore.orphaned.pop(it.key, None)
            if stats is not None:
                stats.moved_keys.append(it.key)
    if stats is not None:
        stats.moved += len(lacking)
    return len(lacking)


def offer(ring, src, owner_id: int, items: list[DataItem]) -> bool:
    """Offer items to their owner, transferring the ones it lacks. False if unreachable."""
    if not ring.send("offer", src.id, owner_id, summary_bytes(len(items)), OVERHEAD):
        return False
    ostore = ring.nodes[owner_id].store
    lacking = [it for it in items if _newer(ostore.get(it.key), it)]
    ring.send("offer", owner_id, src.id, summary_bytes(len(lacking)), OVERHEAD)
    for it in lacking:
        ring.send("data-transfer", src.id, owner_id, HEADER_BYTES + it.size, DATA)
        ostore.put(it)
    return True
