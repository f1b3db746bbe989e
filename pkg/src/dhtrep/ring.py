"""Chord identifier arithmetic, per-node routing state, lookups and repair.

The ring keeps a global registry of every node that ever joined so that
stale references stay resolvable; only the registry's `live` index is
consulted by the oracles, never by the protocol code paths.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, NamedTuple

from sortedcontainers import SortedList

from .messages import HEADER_BYTES, REPAIR, Traffic, node_list_bytes


def distance_cw(a: int, b: int, K: int) -> int:
    """Clockwise distance from `a` to `b` on a ring of size `K`."""
    return (b - a) % K


def in_arc(x: int, start: int, end: int, K: int) -> bool:
    """True if `x` lies in the clockwise arc (start, end]; start == end is the full ring."""
    if start == end:
        return True
    d = (x - start) % K
    return 0 < d <= (end - start) % K


def in_open_arc(x: int, start: int, end: int, K: int) -> bool:
    """True if `x` lies strictly between `start` and `end` going clockwise."""
    d = (x - start) % K
    return 0 < d < ((end - start) % K or K)


@dataclass(frozen=True)
class KeyRange:
    """Clockwise arc (start, end] on a ring of size K."""

    start: int
    end: int
    K: int

    def contains(self, x: int) -> bool:
        return in_arc(x, self.start, self.end, self.K)

    def length(self) -> int:
        return (self.end - self.start) % self.K or self.K

    def shifted(self, delta: int) -> KeyRange:
        return KeyRange((self.start + delta) % self.K, (self.end + delta) % self.K, self.K)

    @property
    def full(self) -> bool:
        return self.start == self.end


class Node:
    """Routing state and local store of one Chord node."""

    __slots__ = (
        "id",
        "alive",
        "successors",
        "predecessor",
        "fingers",
        "store",
        "next_finger",
        "_rt_dist",
        "_rt_ids",
    )

    def __init__(self, node_id: int, finger_count: int, store=None):
        self.id = node_id
        self.alive = True
        self.successors: list[int] = []
        self.predecessor: int | None = None
        self.fingers: list[int | None] = [None] * finger_count
        self.store = store
        self.next_finger = 0
        self._rt_dist: list[int] = []
        self._rt_ids: list[int] = []

    def __repr__(self) -> str:
        state = "up" if self.alive else "down"
        return f"Node({self.id}, {state}, pred={self.predecessor}, succ={self.successors[:2]})"


class RouteResult(NamedTuple):
    node: int
    hops: int
    status: str  # "owner", "pred", "preempted" or "lost"


class LookupResult(NamedTuple):
    owner: int
    pred: int
    successors: list[int]  # starts with owner
    hops: int
    timeouts: int


class ChordRing:
    """A Chord overlay: node registry, routing, lookups, join/fail and stabilize."""

    def __init__(
        self,
        bits: int = 32,
        successor_list_len: int = 10,
        finger_count: int = 12,
        traffic: Traffic | None = None,
        store_factory: Callable[[int], object] | None = None,
        fingers_per_round: int | None = None,
    ):
        if bits < 1 or successor_list_len < 1:
            raise ValueError("bits and successor_list_len must be positive")
        self.bits = bits
        self.K = 1 << bits
        self.L = successor_list_len
        self.finger_count = min(finger_count, bits)
        self.finger_offsets = [1 << (bits - self.finger_count + i) for i in range(self.finger_count)]
        self.fingers_per_round = fingers_per_round
        self.traffic = traffic if traffic is not None else Traffic()
        self.store_factory = store_factory or (lambda node_id: None)
        self.nodes: dict[int, Node] = {}
        self.live: SortedList = SortedList()
        self.now = 0.0
        self.max_hops = 4 * bits + 8

    # -- registry and oracles -------------------------------------------------

    def __len__(self) -> int:
        return len(self.live)

    def alive(self, node_id: int | None) -> bool:
        if node_id is None:
            return False
        node = self.nodes.get(node_id)
        return node is not None and node.alive

    def live_nodes(self) -> list[Node]:
        return [self.nodes[i] for i in self.live]

    def oracle_owner(self, x: int) -> int:
        """First live node clockwise from x, inclusive."""
        i = self.live.bisect_left(x % self.K)
        return self.live[i % len(self.live)]

    def oracle_predecessor(self, node_id: int) -> int:
        """Live node immediately counter-clockwise of `node_id` (exclusive)."""
        i = self.live.bisect_left(node_id)
        return self.live[(i - 1) % len(self.live)]

    def oracle_successors(self, node_id: int, count: int) -> list[int]:
        n = len(self.live)
        i = self.live.bisect_right(node_id)
        out = []
        for j in range(min(count, n)):
            s = self.live[(i + j) % n]
            if s == node_id:
                break
            out.append(s)
        return out

    def partition_ok(self) -> bool:
        """Owned arcs of live nodes partition the ring exactly."""
        if not self.live:
            return True
        if len(self.live) == 1:
            node = self.nodes[self.live[0]]
            return node.predecessor == node.id
        for node_id in self.live:
            node = self.nodes[node_id]
            if node.predecessor != self.oracle_predecessor(node_id):
                return False
        return True

    def keyrange(self, node: Node) -> KeyRange | None:
        if node.predecessor is None:
            return None
        return KeyRange(node.predecessor, node.id, self.K)

    def owns(self, node: Node, x: int) -> bool:
        pred = node.predecessor
        if pred is None:
            return x == node.id
        if pred == node.id:
            return True
        K = self.K
        return 0 < (x - pred) % K <= (node.id - pred) % K

    # -- messaging ------------------------------------------------------------

    def send(self, kind: str, src: int, dst: int, size: int, category: str) -> bool:
        """Deliver one message; returns False (and counts nothing) if dst is down."""
        node = self.nodes.get(dst)
        if node is None or not node.alive:
            return False
        self.traffic.record(self.now, kind, src, dst, size, category)
        return True

    def rpc(self, kind: str, src: int, dst: int, category: str, reply_size: int = HEADER_BYTES) -> bool:
        if not self.send(kind, src, dst, HEADER_BYTES, category):
            return False
        self.traffic.record(self.now, kind, dst, src, reply_size, category)
        return True

    # -- routing tables ---------------------------------------------------------

    def rebuild_table(self, node: Node) -> None:
        K = self.K
        me = node.id
        known = {x for x in node.successors if x is not None and x != me}
        known.update(x for x in node.fingers if x is not None and x != me)
        pairs = sorted(((x - me) % K, x) for x in known)
        node._rt_dist = [d for d, _ in pairs]
        node._rt_ids = [x for _, x in pairs]

    def forget(self, node: Node, dead: int) -> None:
        """Drop every reference `node` holds to `dead`."""
        if dead in node.successors:
            node.successors = [x for x in node.successors if x != dead]
        node.fingers = [None if f == dead else f for f in node.fingers]
        if node.predecessor == dead:
            node.predecessor = None
        self.rebuild_table(node)

    def closest_preceding_node(self, node: Node, target: int, excluded: set[int] | None = None) -> int:
        """Known node most closely preceding `target`, strictly between node and target."""
        dt = (target - node.id) % self.K
        i = bisect_left(node._rt_dist, dt) - 1
        if excluded:
            while i >= 0 and node._rt_ids[i] in excluded:
                i -= 1
        return node._rt_ids[i] if i >= 0 else node.id

    # -- lookups ---------------------------------------------------------------

    def route(
        self,
        origin: int,
        target: int,
        *,
        kind: str = "lookup",
        category: str = "fetch",
        size: int = HEADER_BYTES,
        visit: Callable[[Node], bool] | None = None,
        to_predecessor: bool = False,
    ) -> RouteResult:
        """Recursive routing from `origin` towards `target`.

        Each forwarding step is one hop. If the next hop is down the request
        is lost; the forwarding node notices and drops its reference. With
        `visit`, every node on the path (origin included) may answer first.
        With `to_predecessor`, routing stops at the node whose first
        successor owns the target (status "pred").
        """
        nodes = self.nodes
        K = self.K
        cur = nodes[origin]
        hops = 0
        while True:
            if visit is not None and visit(cur):
                return RouteResult(cur.id, hops, "preempted")
            if self.owns(cur, target):
                return RouteResult(cur.id, hops, "owner")
            succ = cur.successors[0] if cur.successors else None
            if succ is None:
                return RouteResult(cur.id, hops, "owner")
            final = 0 < (target - cur.id) % K <= (succ - cur.id) % K
            if final:
                if to_predecessor:
                    return RouteResult(cur.id, hops, "pred")
                nxt = succ
            else:
                nxt = self.closest_preceding_node(cur, target)
                if nxt == cur.id:
                    nxt, final = succ, True
            if not self.send(kind, cur.id, nxt, size, category):
                self.forget(cur, nxt)
                return RouteResult(cur.id, hops, "lost")
            hops += 1
            cur = nodes[nxt]
            if final:
                if visit is not None and visit(cur):
                    return RouteResult(cur.id, hops, "preempted")
                return RouteResult(cur.id, hops, "owner")
            if hops > self.max_hops:
                return RouteResult(cur.id, hops, "lost")

    def find_successor(self, origin: int, target: int, category: str = "fetch") -> tuple[int, int]:
        """Recursive lookup of the owner of `target`; raises LookupError on timeout."""
        res = self.route(origin, target, category=category)
        if res.status == "lost":
            raise LookupError(f"lookup for {target} lost after {res.hops} hops")
        return res.node, res.hops

    def lookup(self, origin: int, target: int, category: str) -> LookupResult | None:
        """Iterative lookup used by maintenance and repair.

        The origin queries nodes one at a time and routes around the dead
        ones it discovers. Returns None if no live owner could be found.
        """
        nodes = self.nodes
        K = self.K
        excluded: set[int] = set()
        hops = 0
        timeouts = 0
        cur_id = origin
        for _ in range(self.max_hops):
            cur = nodes[cur_id]
            if cur_id != origin:
                if not self.rpc("lookup", origin, cur_id, category, node_list_bytes(self.L)):
                    return None
                hops += 1
            if self.owns(cur, target):
                pred = cur.predecessor if cur.predecessor is not None else cur_id
                return LookupResult(cur_id, pred, [cur_id] + cur.successors, hops, timeouts)
            succs = [x for x in cur.successors if x not in excluded]
            if succs and 0 < (target - cur_id) % K <= (succs[0] - cur_id) % K:
                for j, s in enumerate(succs):
                    if self.alive(s):
                        return LookupResult(s, cur_id, succs[j:], hops, timeouts)
                    timeouts += 1
                    excluded.add(s)
                return None
            nxt = self.closest_preceding_node(cur, target, excluded)
            if nxt == cur_id:
                nxt = succs[0] if succs else None
                if nxt is None:
                    return None
            if not self.alive(nxt):
                timeouts += 1
                excluded.add(nxt)
                continue
            cur_id = nxt
        return None

    # -- membership --------------------------------------------------------------

    def _new_node(self, node_id: int) -> Node:
        if not 0 <= node_id < self.K:
            raise ValueError(f"id {node_id} outside [0, {self.K})")
        if node_id in self.nodes:
            raise ValueError(f"duplicate node id {node_id}")
        node = Node(node_id, self.finger_count, self.store_factory(node_id))
        self.nodes[node_id] = node
        return node

    def build(self, ids) -> None:
        """Create a fully repaired ring from scratch."""
        for node_id in sorted(set(ids)):
            self._new_node(node_id)
            self.live.add(node_id)
        for node_id in self.live:
            node = self.nodes[node_id]
            node.successors = self.oracle_successors(node_id, self.L)
            node.predecessor = self.oracle_predecessor(node_id)
            node.fingers = [
                self._oracle_finger(node_id, off) for off in self.finger_offsets
            ]
            self.rebuild_table(node)

    def _oracle_finger(self, node_id: int, offset: int) -> int | None:
        f = self.oracle_owner((node_id + offset) % self.K)
        return None if f == node_id else f

    def join(self, new_id: int, bootstrap: int | None = None) -> Node:
        """Add a node; it learns its successor through `bootstrap` and starts empty."""
        if new_id in self.nodes:
            raise ValueError(f"duplicate node id {new_id}")
        if not self.live:
            node = self._new_node(new_id)
            node.predecessor = new_id
            self.live.add(new_id)
            return node
        if bootstrap is None or not self.alive(bootstrap):
            bootstrap = self.live[0]
        res = self.lookup(bootstrap, new_id, REPAIR)
        if res is None:
            raise LookupError(f"join of {new_id} via {bootstrap} failed")
        node = self._new_node(new_id)
        succ = self.nodes[res.owner]
        self.rpc("chord-repair", new_id, succ.id, REPAIR, node_list_bytes(self.L))
        node.successors = self._trim([succ.id] + succ.successors, new_id)
        if succ.predecessor is not None and succ.predecessor != succ.id and self.alive(succ.predecessor):
            node.predecessor = succ.predecessor
        elif succ.predecessor == succ.id:
            node.predecessor = succ.id
        self.live.add(new_id)
        self.rebuild_table(node)
        self.send("chord-repair", new_id, succ.id, HEADER_BYTES, REPAIR)
        self._notify(succ, new_id)
        self.fix_fingers(node, all_fingers=True)
        return node

    def fail(self, node_id: int) -> Node:
        node = self.nodes.get(node_id)
        if node is None or not node.alive:
            raise ValueError(f"node {node_id} is not alive")
        node.alive = False
        self.live.remove(node_id)
        if node.store is not None:
            node.store.drop_all()
        return node

    # -- repair -------------------------------------------------------------------

    def _trim(self, ids: list[int], me: int) -> list[int]:
        out: list[int] = []
        for x in ids:
            if x == me:
                break
            if x not in out:
                out.append(x)
            if len(out) == self.L:
                break
        return out

    def _notify(self, succ: Node, candidate: int) -> None:
        pred = succ.predecessor
        if (
            pred is None
            or pred == succ.id
            or not self.alive(pred)
            or in_open_arc(candidate, pred, succ.id, self.K)
        ):
            succ.predecessor = candidate
        if not succ.successors:
            succ.successors = [candidate]
            self.rebuild_table(succ)

    def stabilize(self, node: Node) -> None:
        """One repair round: successor check, notify, successor list, predecessor, fingers."""
        me = node.id
        while node.successors and not self.alive(node.successors[0]):
            node.successors.pop(0)
        if not node.successors:
            if node.predecessor is not None and node.predecessor != me and self.alive(node.predecessor):
                node.successors = [node.predecessor]
            else:
                self._recover_successor(node)
        if not node.successors:
            node.predecessor = me
            node.fingers = [None] * self.finger_count
            self.rebuild_table(node)
            return
        succ = self.nodes[node.successors[0]]
        self.rpc("chord-repair", me, succ.id, REPAIR)
        x = succ.predecessor
        if x is not None and x != me and self.alive(x) and in_open_arc(x, me, succ.id, self.K):
            succ = self.nodes[x]
        self.send("chord-repair", me, succ.id, HEADER_BYTES, REPAIR)
        self._notify(succ, me)
        self.rpc("chord-repair", me, succ.id, REPAIR, node_list_bytes(self.L))
        node.successors = self._trim([succ.id] + succ.successors, me)
        pred = node.predecessor
        if pred is not None and pred != me and not self.rpc("chord-repair", me, pred, REPAIR):
            node.predecessor = None
        if node.predecessor == me:
            node.predecessor = None
        self.rebuild_table(node)
        self.fix_fingers(node)

    def _recover_successor(self, node: Node) -> None:
        for f in node.fingers:
            if f is not None and self.alive(f):
                res = self.lookup(f, (node.id + 1) % self.K, REPAIR)
                if res is not None and res.owner != node.id:
                    node.successors = self._trim(res.successors, node.id)
                    self.rebuild_table(node)
                    return
        node.successors = []

    def fix_fingers(self, node: Node, all_fingers: bool = False) -> None:
        fc = self.finger_count
        if all_fingers or self.fingers_per_round is None or self.fingers_per_round >= fc:
            todo = range(fc)
        else:
            todo = [(node.next_finger + j) % fc for j in range(self.fingers_per_round)]
            node.next_finger = (node.next_finger + self.fingers_per_round) % fc
        K = self.K
        me = node.id
        succ = node.successors[0] if node.successors else None
        for i in todo:
            start = (me + self.finger_offsets[i]) % K
            prev = node.fingers[i - 1] if i > 0 else succ
            if prev is not None and self.alive(prev) and in_arc(start, me, prev, K):
                node.fingers[i] = prev
                continue
            if succ is not None and in_arc(start, me, succ, K):
                node.fingers[i] = succ
                continue
            res = self.lookup(me, start, REPAIR)
            node.fingers[i] = None if res is None or res.owner == me else res.owner
        self.rebuild_table(node)

    def repair_all(self, rounds: int = 1) -> None:
        for _ in range(rounds):
            for node_id in list(self.live):
                self.stabilize(self.nodes[node_id])

