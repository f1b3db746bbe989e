"""Dynamic replica enumeration: replicas at h(m, d) for 1 <= m <= R_MAX.

Every item carries its anchor h(1, d); for all allocation kinds the other
locations are fixed translations of it, h(m, d) = anchor + delta_m, which
lets the maintenance code work on arcs of anchors rather than on keys.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from sortedcontainers import SortedDict

from .allocation import AllocationConfig, allocate
from .bloom import BloomSummary
from .messages import FETCH, HEADER_BYTES, OVERHEAD, bloom_bytes
from .protocol import FOUND, NOT_FOUND, TIMEOUT, FetchState, Timeouts
from .ring import ChordRing, Node, in_arc
from .store import (
    DataItem,
    HolderIndex,
    ReplicaStore,
    SyncStats,
    complement_intervals,
    offer,
    sync_pull,
    sync_push,
    union_of_arcs,
)


class LookupCache:
    """Owner lookups remembered between maintenance runs.

    Maps node id -> believed predecessor. An entry is revalidated with a
    ping the first time it is used in each run.
    """

    def __init__(self):
        self.entries: SortedDict = SortedDict()
        self.checked: set[int] = set()

    def begin_run(self) -> None:
        self.checked = set()


@dataclass(frozen=True)
class GetResult:
    item: DataItem | None
    node: int
    hops: int
    status: str  # "found", "miss" or "lost"


@dataclass(frozen=True)
class UpdateResult:
    updated: int
    probes: int
    unreachable: int


class DynamicReplication:
    def __init__(
        self,
        ring: ChordRing,
        cfg: AllocationConfig,
        timeouts: Timeouts | None = None,
        registry: HolderIndex | None = None,
        core_first: bool = True,
        remove_single: bool = False,
        bloom_bits: int = 10,
        bloom_k: int = 7,
        overload_threshold: int | None = None,
    ):
        if cfg.K != ring.K:
            raise ValueError("allocation ring size differs from the overlay's")
        self.ring = ring
        self.cfg = cfg
        self.name = f"dyn-{cfg.kind}"
        self.r_min = cfg.r_min
        self.r_max = cfg.r_max
        self.deltas = cfg.deltas()
        self.timeouts = timeouts or Timeouts()
        self.registry = registry if registry is not None else HolderIndex()
        self.core_first = core_first
        self.remove_single = remove_single
        self.bloom_bits = bloom_bits
        self.bloom_k = bloom_k
        self.overload_threshold = overload_threshold
        self.served: dict[int, int] = {}
        self.caches: dict[int, LookupCache] = {}
        ring.store_factory = self.make_store

    def make_store(self, node_id: int) -> ReplicaStore:
        return ReplicaStore(node_id, self.ring.K, self.registry)

    def anchor(self, key: int) -> int:
        return allocate(self.cfg, 1, key)

    def make_item(self, key: int, size: int, version: int = 0) -> DataItem:
        return DataItem(key, self.anchor(key), size, version)

    def locations(self, anchor: int) -> list[int]:
        K = self.ring.K
        return [(anchor + dm) % K for dm in self.deltas]

    # -- oracles ----------------------------------------------------------------

    def duty_oracle(self, key: int) -> set[int]:
        """Holders required on a repaired ring: indices in order until R_MIN distinct owners."""
        ring = self.ring
        holders: list[int] = []
        for loc in self.locations(self.anchor(key)):
            o = ring.oracle_owner(loc)
            if o not in holders:
                holders.append(o)
                if len(holders) == self.r_min:
                    break
        return set(holders)

    def allowed_oracle(self, key: int) -> set[int]:
        """Live nodes owning at least one replica location of `key`."""
        return {self.ring.oracle_owner(loc) for loc in self.locations(self.anchor(key))}

    # -- helpers ---------------------------------------------------------------------

    def holds_location(self, node: Node, anchor: int) -> bool:
        ring = self.ring
        K = ring.K
        return any(ring.owns(node, (anchor + dm) % K) for dm in self.deltas)

    def _cache(self, node: Node) -> LookupCache:
        cache = self.caches.get(node.id)
        if cache is None:
            cache = self.caches[node.id] = LookupCache()
        return cache

    def resolve(self, node: Node, cache: LookupCache, x: int) -> tuple[int, int] | None:
        """Owner of point x and its arc start, using the cache where possible."""
        ring = self.ring
        if ring.owns(node, x):
            return node.id, node.predecessor
        ent = cache.entries
        if ent:
            i = ent.bisect_left(x)
            c = ent.keys()[i % len(ent)]
            pred = ent[c]
            if pred is not None and in_arc(x, pred, c, ring.K):
                if c not in cache.checked:
                    if ring.rpc("lookup", node.id, c, OVERHEAD):
                        cache.checked.add(c)
                        pred = ent[c] = ring.nodes[c].predecessor
                    else:
                        del ent[c]
                        pred = None
                if pred is not None and in_arc(x, pred, c, ring.K):
                    return c, pred
        res = ring.lookup(node.id, x, OVERHEAD)
        if res is None:
            return None
        ent[res.owner] = res.pred
        cache.checked.add(res.owner)
        succs = res.successors
        for a, b in zip(succs, succs[1:]):
            if b not in ent:
                ent[b] = a
        return res.owner, res.pred

    def owners_along(self, node: Node, cache: LookupCache, a: int, b: int):
        """Split the arc (a, b] by owner. Returns [(start, end, owner)] or None."""
        K = self.ring.K
        a %= K
        b %= K
        total = (b - a) % K or K
        pieces = []
        cur = a
        covered = 0
        for _ in range(4 * len(self.ring.live) + 4):
            res = self.resolve(node, cache, (cur + 1) % K)
            if res is None:
                return None
            o = res[0]
            step = (o - cur) % K or K
            if covered + step >= total:
                pieces.append((cur, b, o))
                return pieces
            pieces.append((cur, o, o))
            covered += step
            cur = o
        return None

    # -- insert -------------------------------------------------------------------------

    def put(self, origin: int, item: DataItem) -> bool:
        res = self.ring.route(origin, item.anchor, kind="get", category=FETCH)
        if res.status == "lost":
            return False
        self.ring.send("data-transfer", origin, res.node, HEADER_BYTES + item.size, FETCH)
        self.ring.nodes[res.node].store.put(item)
        return True

    # -- maintenance -------------------------------------------------------------------------

    def core_segments(self, node: Node, cache: LookupCache):
        """Split the owned arc into anchor segments with their distinct core holders.

        Indices are walked in order; an index whose owner already holds the
        segment is skipped, so collided keyspace spills into the lowest
        unused peripheral index.
        """
        K = self.ring.K
        segs = [(node.predecessor, node.id, (node.id,))]
        done = []
        for m in range(2, self.r_max + 1):
            if not segs:
                break
            dm = self.deltas[m - 1]
            nxt = []
            for s, e, hs in segs:
                pieces = self.owners_along(node, cache, s + dm, e + dm)
                if pieces is None:
                    continue
                for ps, pe, o in pieces:
                    child = (ps - dm) % K, (pe - dm) % K, hs if o in hs else hs + (o,)
                    (done if len(child[2]) >= self.r_min else nxt).append(child)
            segs = nxt
        return done + segs

    def core_maintenance(self, node: Node, cache: LookupCache | None = None) -> SyncStats:
        stats = SyncStats()
        if node.predecessor is None:
            return stats
        if cache is None:
            cache = self._cache(node)
            cache.begin_run()
        if self.r_min == 1:
            return stats
        groups: dict[int, list[tuple[int, int]]] = {}
        for s, e, hs in self.core_segments(node, cache):
            for h in hs[1:]:
                groups.setdefault(h, []).append((s, e))
        for h, arcs in groups.items():
            sync_pull(self.ring, node, h, arcs, stats)
        for h, arcs in groups.items():
            sync_push(self.ring, node, h, arcs, stats)
        return stats

    def peripheral_maintenance(self, node: Node, cache: LookupCache | None = None) -> int:
        """Check the replica predecessor of every peripheral item; returns deletions."""
        if node.predecessor is None or self.r_max == self.r_min:
            return 0
        if cache is None:
            cache = self._cache(node)
            cache.begin_run()
        ring = self.ring
        K = ring.K
        store = node.store
        pred = node.predecessor
        seen: set[int] = set()
        for j in range(self.r_min):
            dj = self.deltas[j]
            seen.update(it.key for it in store.in_arc((pred - dj) % K, (node.id - dj) % K))
        deleted = 0
        for m in range(self.r_min + 1, self.r_max + 1):
            dm = self.deltas[m - 1]
            items = [it for it in store.in_arc((pred - dm) % K, (node.id - dm) % K) if it.key not in seen]
            if not items:
                continue
            seen.update(it.key for it in items)
            dp = self.deltas[m - 2]
            pieces = self.owners_along(node, cache, pred - dm + dp, node.id - dm + dp)
            if pieces is None:
                continue
            for ps, pe, o in pieces:
                sub = [it for it in items if in_arc((it.anchor + dp) % K, ps, pe, K)]
                if not sub:
                    continue
                if o == node.id:
                    for it in sub:
                        store.orphaned.pop(it.key, None)
                    continue
                if not ring.send("bloom-summary", node.id, o, HEADER_BYTES, OVERHEAD):
                    continue
                ostore = ring.nodes[o].store
                theirs = [
                    it.key
                    for it in ostore.in_arc((ps - dp) % K, (pe - dp) % K)
                    if it.key not in ostore.orphaned
                ]
                bloom = BloomSummary.of(theirs, self.bloom_bits, self.bloom_k)
                ring.send("bloom-summary", o, node.id, bloom_bytes(len(theirs), self.bloom_bits), OVERHEAD)
                for it in sub:
                    if it.key in bloom:
                        store.orphaned.pop(it.key, None)
                    elif it.key in store.orphaned:
                        store.remove(it.key)
                        deleted += 1
                    else:
                        store.orphaned[it.key] = ring.now
        return deleted

    def global_maintenance(self, node: Node, cache: LookupCache | None = None) -> int:
        """Offer items this node holds no location for to their owner, then delete them."""
        if node.predecessor is None or node.predecessor == node.id:
            return 0
        if cache is None:
            cache = self._cache(node)
            cache.begin_run()
        ring = self.ring
        K = ring.K
        pred = node.predecessor
        allowed = union_of_arcs((((pred - dm) % K, (node.id - dm) % K) for dm in self.deltas), K)
        out: list[DataItem] = []
        for lo, hi in complement_intervals(allowed, K):
            out.extend(node.store.in_interval(lo, hi))
        deleted = 0
        i = 0
        while i < len(out):
            res = self.resolve(node, cache, out[i].anchor)
            if res is None:
                i += 1
                continue
            owner, opred = res
            batch = []
            while i < len(out) and in_arc(out[i].anchor, opred, owner, K):
                batch.append(out[i])
                i += 1
            if not batch:
                batch.append(out[i])
                i += 1
            if owner != node.id and offer(ring, node, owner, batch):
                for it in batch:
                    node.store.remove(it.key)
                deleted += len(batch)
        return deleted

    def maintain(self, node: Node) -> None:
        cache = self._cache(node)
        cache.begin_run()
        self.core_maintenance(node, cache)
        self.peripheral_maintenance(node, cache)
        self.global_maintenance(node, cache)

    # -- fetch -----------------------------------------------------------------------------------

    def _overloaded(self, node_id: int) -> bool:
        t = self.overload_threshold
        return t is not None and self.served.get(node_id, 0) >= t

    def recursive_get(self, origin: int, key: int, location: int) -> GetResult:
        """Route towards `location`; any node on the way holding a valid replica answers."""
        ring = self.ring
        anchor = self.anchor(key)
        location %= ring.K
        hit: list[DataItem] = []

        def visit(node: Node) -> bool:
            it = node.store.servable(key)
            if it is None or not self.holds_location(node, anchor):
                return False
            if self._overloaded(node.id) and not ring.owns(node, location):
                return False
            hit.append(it)
            return True

        res = ring.route(origin, location, kind="recursive-get", category=FETCH, visit=visit)
        if res.status == "lost":
            return GetResult(None, res.node, res.hops, "lost")
        item = hit[0] if hit else None
        if item is not None and self.overload_threshold is not None:
            self.served[res.node] = self.served.get(res.node, 0) + 1
        if res.node != origin:
            size = HEADER_BYTES + (item.size if item is not None else 0)
            ring.send("recursive-get", res.node, origin, size, FETCH)
        return GetResult(item, res.node, res.hops, "found" if item is not None else "miss")

    def _pick(self, pending: list[int], rng: random.Random) -> int:
        if self.core_first:
            core = [i for i, m in enumerate(pending) if m <= self.r_min]
            if core:
                return pending.pop(core[rng.randrange(len(core))])
        return pending.pop(rng.randrange(len(pending)))

    def fetch_step(self, st: FetchState, rng: random.Random) -> str:
        """Search replica indices until an item, a timeout, or an exhausted list."""
        if st.pending is None:
            st.pending = list(range(1, self.r_max + 1))
        anchor = self.anchor(st.key)
        K = self.ring.K
        while st.pending:
            m = self._pick(st.pending, rng)
            res = self.recursive_get(st.origin, st.key, (anchor + self.deltas[m - 1]) % K)
            st.probes += 1
            if res.status == "lost" or res.hops + 1 > self.timeouts.recursive:
                st.latency += self.timeouts.recursive
                st.timeouts += 1
                return TIMEOUT
            st.latency += res.hops + (res.node != st.origin)
            if res.item is not None:
                st.item = res.item
                return FOUND
            if m > self.r_min and not self.remove_single:
                st.pending = [i for i in st.pending if i < m]
        st.pending = None
        return NOT_FOUND

    def fetch(self, origin: int, key: int, rng: random.Random, max_attempts: int = 1) -> FetchState:
        st = FetchState(origin, key)
        for _ in range(max_attempts):
            if self.fetch_step(st, rng) == FOUND:
                break
        return st

    # -- updates -------------------------------------------------------------------------------

    def update(
        self,
        origin: int,
        item: DataItem,
        strict: bool = True,
        stop_after_empty: int = 2,
    ) -> UpdateResult:
        """Offer a new version to the owner of every replica location."""
        ring = self.ring
        updated = probes = unreachable = empties = 0
        for m, loc in enumerate(self.locations(item.anchor), start=1):
            res = ring.route(origin, loc, kind="offer", category=FETCH)
            probes += 1
            if res.status == "lost":
                unreachable += 1
                continue
            ring.send("offer", origin, res.node, HEADER_BYTES + item.size, FETCH)
            ostore = ring.nodes[res.node].store
            if item.key in ostore or m <= self.r_min:
                ostore.put(item)
                updated += 1
                empties = 0
            else:
                empties += 1
                if not strict and empties >= stop_after_empty:
                    break
        return UpdateResult(updated, probes, unreachable)

