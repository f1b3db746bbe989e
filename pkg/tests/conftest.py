from __future__ import annotations

import random

import pytest

from dhtrep.allocation import AllocationConfig
from dhtrep.dhash import DHash
from dhtrep.dynamic import DynamicReplication
from dhtrep.messages import DATA
from dhtrep.ring import ChordRing


class Net:
    """A ring, a protocol and the keys stored in it."""

    def __init__(self, ring, proto, keys, rng):
        self.ring = ring
        self.proto = proto
        self.keys = keys
        self.rng = rng

    @property
    def registry(self):
        return self.proto.registry

    def node(self, node_id):
        return self.ring.nodes[node_id]

    def data_bytes(self) -> int:
        return self.ring.traffic.bytes[DATA]

    def sweep(self) -> int:
        """One maintenance run on every live node; returns data bytes moved."""
        before = self.data_bytes()
        for node_id in list(self.ring.live):
            self.proto.maintain(self.ring.nodes[node_id])
        return self.data_bytes() - before

    def converge(self, limit: int = 10) -> int:
        for i in range(1, limit + 1):
            if self.sweep() == 0:
                return i
        raise AssertionError("maintenance did not converge")

    def holders(self, key) -> set[int]:
        return set(self.registry.holders.get(key, ()))

    def fresh_id(self) -> int:
        while True:
            x = self.rng.randrange(self.ring.K)
            if x not in self.ring.nodes:
                return x

    def settle(self, limit: int = 60) -> int:
        """Repair rounds until every successor list matches the oracle."""
        ring = self.ring
        for i in range(1, limit + 1):
            ring.repair_all(1)
            if all(
                ring.nodes[n].successors == ring.oracle_successors(n, ring.L)
                and ring.nodes[n].predecessor == ring.oracle_predecessor(n)
                for n in ring.live
            ):
                return i
        raise AssertionError("ring did not settle")

    def churn(self, fails: int, joins: int) -> None:
        for victim in self.rng.sample(list(self.ring.live), fails):
            self.ring.fail(victim)
        self.ring.repair_all(3)
        for _ in range(joins):
            self.ring.join(self.fresh_id(), bootstrap=self.ring.live[0])
        self.settle()


def _populate(ring, proto, n, items, seed, bits):
    rng = random.Random(seed)
    ring.build(rng.sample(range(1 << bits), n))
    keys = rng.sample(range(1 << bits), items)
    live = list(ring.live)
    for key in keys:
        assert proto.put(live[rng.randrange(n)], proto.make_item(key, 1024))
    return Net(ring, proto, keys, rng)


def dhash_net(n=40, items=400, r=6, seed=1, bits=32) -> Net:
    ring = ChordRing(bits=bits)
    proto = DHash(ring, r=r)
    return _populate(ring, proto, n, items, seed, bits)


def dynamic_net(kind="successor", n=40, items=400, r_min=4, r_max=None, seed=1, bits=32, **kw) -> Net:
    ring = ChordRing(bits=bits)
    if r_max is None:
        r_max = r_min + 4
    cfg = AllocationConfig(kind, ring.K, n, r_min, r_max, check_spare=kw.pop("check_spare", True))
    proto = DynamicReplication(ring, cfg, **kw)
    return _populate(ring, proto, n, items, seed, bits)


@pytest.fixture
def converged_dhash():
    net = dhash_net()
    net.converge()
    return net


# -- acceptance report ------------------------------------------------------------------------

ACCEPTANCE: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("abc")), s)):
            terminalreporter.write_line(line)
