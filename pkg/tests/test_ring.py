from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhtrep.messages import REPAIR
from dhtrep.ring import ChordRing, KeyRange, distance_cw, in_arc


def make_ring(n: int, seed: int = 1, bits: int = 32) -> ChordRing:
    rng = random.Random(seed)
    ring = ChordRing(bits=bits)
    ring.build(rng.sample(range(1 << bits), n))
    return ring


# -- identifier arithmetic ----------------------------------------------------


def test_distance_examples():
    assert distance_cw(5, 5, 1 << 32) == 0
    assert distance_cw(14, 2, 16) == 4
    assert distance_cw(1000, 8, 1024) == 32


@given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
def test_distance_antisymmetry(a, b):
    K = 1 << 16
    if a == b:
        assert distance_cw(a, b, K) == 0
    else:
        assert distance_cw(a, b, K) + distance_cw(b, a, K) == K


@given(st.integers(0, 1023), st.integers(0, 1023), st.integers(0, 1023))
def test_keyrange_contains_matches_definition(start, end, x):
    K = 1024
    kr = KeyRange(start, end, K)
    if start == end:
        assert kr.contains(x)
    else:
        expect = distance_cw(start, x, K) <= distance_cw(start, end, K) and x != start
        assert kr.contains(x) == expect


def test_full_ring_keyrange():
    kr = KeyRange(7, 7, 64)
    assert kr.full and kr.length() == 64
    assert all(kr.contains(x) for x in range(64))


# -- routing ----------------------------------------------------------------------


def test_closest_preceding_node_degenerate():
    ring = ChordRing(bits=16)
    node = ring.join(100)
    assert ring.closest_preceding_node(node, 5000) == 100


def test_closest_preceding_node_immediate_successor():
    ring = make_ring(50)
    node = ring.nodes[ring.live[0]]
    succ = node.successors[0]
    target = succ  # inside (n, succ]
    assert ring.closest_preceding_node(node, target) in (node.id, succ)


def test_closest_preceding_node_matches_scan_oracle():
    ring = make_ring(200, seed=3)
    rng = random.Random(4)
    K = ring.K
    for _ in range(500):
        node = ring.nodes[ring.live[rng.randrange(200)]]
        target = rng.randrange(K)
        known = {f for f in node.fingers if f is not None} | set(node.successors)
        # oracle: linear scan over the known live nodes strictly between n and target
        cands = [x for x in known if x != target and distance_cw(node.id, x, K) < distance_cw(node.id, target, K)]
        expect = max(cands, key=lambda x: distance_cw(node.id, x, K)) if cands else node.id
        assert ring.closest_preceding_node(node, target) == expect


def test_find_successor_self_and_two_node():
    ring = ChordRing(bits=16)
    ring.build([100, 30000])
    assert ring.find_successor(100, 50) == (100, 0)
    owner, hops = ring.find_successor(100, 20000)
    assert owner == 30000 and hops == 1


def test_routing_correct_and_hop_bound():
    ring = make_ring(200, seed=5)
    rng = random.Random(6)
    hops = []
    for _ in range(10_000):
        x = rng.randrange(ring.K)
        owner, h = ring.find_successor(ring.live[rng.randrange(200)], x)
        assert owner == ring.oracle_owner(x)
        hops.append(h)
    mean = sum(hops) / len(hops)
    assert 0.5 * math.log2(200) <= mean <= 1.5 * math.log2(200)


def test_iterative_lookup_routes_around_dead_nodes():
    ring = make_ring(100, seed=8)
    rng = random.Random(9)
    for node_id in rng.sample(list(ring.live), 20):
        ring.fail(node_id)
    for _ in range(300):
        x = rng.randrange(ring.K)
        res = ring.lookup(ring.live[rng.randrange(len(ring.live))], x, REPAIR)
        assert res is not None and res.owner == ring.oracle_owner(x)


# -- membership and repair -----------------------------------------------------------


def test_join_into_empty_ring_owns_everything():
    ring = ChordRing(bits=16)
    node = ring.join(1234)
    assert all(ring.owns(node, x) for x in (0, 1234, 1235, 65535))


def test_duplicate_join_rejected():
    ring = make_ring(10)
    with pytest.raises(ValueError):
        ring.join(ring.live[3])


def test_fail_of_one_of_two_nodes():
    ring = ChordRing(bits=16)
    ring.build([10, 40000])
    ring.fail(40000)
    ring.repair_all(2)
    node = ring.nodes[10]
    assert all(ring.owns(node, x) for x in (0, 11, 39999, 40000, 65535))


def test_stabilize_fixpoint_is_quiet():
    ring = make_ring(50)
    ring.repair_all(1)
    before = {n: (list(ring.nodes[n].successors), ring.nodes[n].predecessor, list(ring.nodes[n].fingers)) for n in ring.live}
    count0 = sum(ring.traffic.counts.values())
    node = ring.nodes[ring.live[0]]
    ring.stabilize(node)
    after = {n: (list(ring.nodes[n].successors), ring.nodes[n].predecessor, list(ring.nodes[n].fingers)) for n in ring.live}
    assert before == after
    msgs = sum(ring.traffic.counts.values()) - count0
    ring.stabilize(node)
    assert sum(ring.traffic.counts.values()) - count0 == 2 * msgs


def test_failed_successor_promotes_next():
    ring = make_ring(30)
    node = ring.nodes[ring.live[0]]
    first, second = node.successors[:2]
    ring.fail(first)
    ring.stabilize(node)
    assert node.successors[0] == second


def test_join_between_node_and_successor_within_two_rounds():
    ring = make_ring(60, seed=11)
    n = ring.nodes[ring.live[10]]
    s = n.successors[0]
    new_id = n.id + (s - n.id) // 2
    ring.join(new_id, bootstrap=ring.live[40])
    for _ in range(2):
        ring.stabilize(n)
    assert n.successors[0] == new_id


def test_two_hundred_joins_partition():
    ring = ChordRing(bits=32)
    rng = random.Random(12)
    ids = rng.sample(range(ring.K), 200)
    ring.join(ids[0])
    for x in ids[1:]:
        ring.join(x, bootstrap=ring.live[rng.randrange(len(ring.live))])
        ring.repair_all(1)
    ring.repair_all(int(math.ceil(math.log2(200))))
    assert ring.partition_ok()
    for _ in range(1000):
        x = rng.randrange(ring.K)
        owners = [n for n in ring.live if ring.owns(ring.nodes[n], x)]
        assert owners == [ring.oracle_owner(x)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_repair_convergence_after_single_change(seed, do_join):
    rng = random.Random(seed)
    n = 64
    ring = make_ring(n, seed=seed)
    if do_join:
        new_id = rng.randrange(ring.K)
        while new_id in ring.nodes:
            new_id = rng.randrange(ring.K)
        ring.join(new_id, bootstrap=ring.live[rng.randrange(n)])
    else:
        ring.fail(ring.live[rng.randrange(n)])
    ring.repair_all(math.ceil(math.log2(n)))
    assert ring.partition_ok()


def test_in_arc_matches_keyrange():
    assert in_arc(3, 10, 5, 16) and not in_arc(10, 10, 5, 16)
