"""Successor replication: each key lives on its owner and the owner's r successors."""

from __future__ import annotations

import random

from .messages import FETCH, HEADER_BYTES, OVERHEAD, node_list_bytes
from .protocol import FOUND, NOT_FOUND, TIMEOUT, FetchState, Timeouts
from .ring import ChordRing, Node, in_arc
from .store import DataItem, HolderIndex, ReplicaStore, SyncStats, offer, sync_pull, sync_push


class DHash:
    name = "dhash"

    def __init__(
        self,
        ring: ChordRing,
        r: int = 6,
        timeouts: Timeouts | None = None,
        registry: HolderIndex | None = None,
    ):
        if r < 0:
            raise ValueError("r must be non-negative")
        self.ring = ring
        self.r = r
        self.timeouts = timeouts or Timeouts()
        self.registry = registry if registry is not None else HolderIndex()
        ring.store_factory = self.make_store

    def make_store(self, node_id: int) -> ReplicaStore:
        return ReplicaStore(node_id, self.ring.K, self.registry)

    def anchor(self, key: int) -> int:
        return key

    def make_item(self, key: int, size: int, version: int = 0) -> DataItem:
        return DataItem(key, key, size, version)

    # -- oracle --------------------------------------------------------------

    def duty_oracle(self, key: int) -> set[int]:
        """Live nodes that should hold `key` on a repaired ring."""
        ring = self.ring
        owner = ring.oracle_owner(key)
        return {owner, *ring.oracle_successors(owner, self.r)}

    # -- insert ---------------------------------------------------------------

    def put(self, origin: int, item: DataItem) -> bool:
        """Route to the owner and store there; replicas follow at maintenance."""
        res = self.ring.route(origin, item.key, kind="get", category=FETCH)
        if res.status == "lost":
            return False
        self.ring.send("data-transfer", origin, res.node, HEADER_BYTES + item.size, FETCH)
        self.ring.nodes[res.node].store.put(item)
        return True

    # -- maintenance ------------------------------------------------------------

    def local_maintenance(self, node: Node) -> SyncStats:
        stats = SyncStats()
        if node.predecessor is None:
            return stats
        arcs = [(node.predecessor, node.id)]
        succs = node.successors[: self.r]
        for s in succs:
            sync_pull(self.ring, node, s, arcs, stats)
        for s in succs:
            sync_push(self.ring, node, s, arcs, stats)
        return stats

    def global_maintenance(self, node: Node) -> int:
        """Hand back keys this node no longer replicates. Returns the number deleted."""
        if node.predecessor is None or node.predecessor == node.id:
            return 0
        ring = self.ring
        K = ring.K
        r = self.r
        pending = node.store.in_arc(node.id, node.predecessor)
        deleted = 0
        i = 0
        while i < len(pending):
            res = ring.lookup(node.id, pending[i].anchor, OVERHEAD)
            if res is None:
                break
            lst = res.successors
            prev = res.pred
            if len(lst) < r + 1 and node.id in lst:
                # the ring is so small that every group contains this node
                break
            start = i
            for j, owner in enumerate(lst):
                if owner == node.id or j + r + 1 > len(lst):
                    break
                batch = []
                while i < len(pending) and in_arc(pending[i].anchor, prev, owner, K):
                    batch.append(pending[i])
                    i += 1
                if batch and node.id not in lst[j : j + r + 1]:
                    if offer(ring, node, owner, batch):
                        for it in batch:
                            node.store.remove(it.key)
                        deleted += len(batch)
                prev = owner
            if i == start:
                i += 1
        return deleted

    def maintain(self, node: Node) -> None:
        self.global_maintenance(node)
        self.local_maintenance(node)

    # -- fetch ----------------------------------------------------------------------

    def fetch_step(self, st: FetchState, rng: random.Random) -> str:
        """Run one attempt of the successor-list fetch."""
        ring = self.ring
        origin = ring.nodes[st.origin]
        if st.pending is None:
            if ring.owns(origin, st.key):
                cands = [origin.id] + origin.successors[: self.r]
            else:
                res = ring.route(st.origin, st.key, kind="lookup", category=FETCH, to_predecessor=True)
                if res.status == "lost" or res.hops + 1 > self.timeouts.recursive:
                    st.latency += self.timeouts.recursive
                    st.timeouts += 1
                    return TIMEOUT
                found = ring.nodes[res.node]
                if res.status == "pred":
                    cands = found.successors[: self.r + 1]
                else:
                    cands = [found.id] + found.successors[: self.r]
                st.latency += res.hops
                if found.id != st.origin:
                    ring.send("lookup", found.id, st.origin, node_list_bytes(len(cands)), FETCH)
                    st.latency += 1
            st.pending = list(cands)
        while st.pending:
            c = st.pending.pop(rng.randrange(len(st.pending)))
            st.probes += 1
            if c == st.origin:
                item = origin.store.get(st.key)
            elif not ring.send("get", st.origin, c, HEADER_BYTES, FETCH):
                st.latency += self.timeouts.rtt
                continue
            else:
                item = ring.nodes[c].store.get(st.key)
                size = HEADER_BYTES + (item.size if item is not None else 0)
                ring.send("get", c, st.origin, size, FETCH)
                st.latency += 2
            if item is not None:
                st.item = item
                return FOUND
        st.pending = None
        return NOT_FOUND

    def fetch(self, origin: int, key: int, rng: random.Random, max_attempts: int = 1) -> FetchState:
        """Convenience wrapper: run attempts back to back without simulated waiting."""
        st = FetchState(origin, key)
        for _ in range(max_attempts):
            if self.fetch_step(st, rng) == FOUND:
                break
        return st
