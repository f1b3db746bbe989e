from __future__ import annotations

import numpy as np
import pytest

from dhtrep.allocation import AllocationConfig, allocate
from dhtrep.placement import (
    MODEL_KINDS,
    PlacementModel,
    model_offsets,
    placement_loss_model,
    replica_limit,
    ring_losses,
    wilson_interval,
)


def brute_losses(ids, failed, kind, r_max, K, policy, offsets=None):
    """Lost key counts for r = 1..r_max by checking every key."""
    dead = {int(i) for i, f in zip(ids, failed) if f}
    ids = np.sort(np.asarray(ids))
    N = len(ids)
    u = K // N
    out = np.zeros(r_max, np.int64)

    def owner(x):
        j = np.searchsorted(ids, x % K)
        return int(ids[j % N])

    for r in range(1, r_max + 1):
        M = replica_limit(r, policy)
        if kind == "block":
            locs = lambda d, m: (d - d % (M * u) + d % u + m * u) % K  # noqa: E731
        else:
            offs = offsets if offsets is not None else model_offsets(kind, K, N, M)
            locs = lambda d, m: (d + int(offs[m - 1])) % K  # noqa: E731
        lost = 0
        for d in range(K):
            group = []
            for m in range(1, M + 1):
                o = owner(locs(d, m))
                if o not in group:
                    group.append(o)
                    if len(group) == r:
                        break
            lost += all(o in dead for o in group)
        out[r - 1] = lost
    return out


def random_ring(seed, N, K, n_failed):
    rng = np.random.default_rng(seed)
    ids = rng.choice(K, size=N, replace=False)
    failed = np.zeros(N, bool)
    failed[rng.choice(N, size=n_failed, replace=False)] = True
    return ids, failed


@pytest.mark.parametrize("policy", ["ample", "recommended"])
@pytest.mark.parametrize("kind", ["successor", "predecessor", "finger", "block"])
def test_search_matches_brute_force(kind, policy):
    K, N = 1 << 10, 16
    for seed in range(3):
        ids, failed = random_ring(seed, N, K, 9)
        fast = ring_losses(ids, failed, kind, 4, K, policy)
        slow = brute_losses(ids, failed, kind, 4, K, policy)
        assert fast.tolist() == slow.tolist()


def test_search_matches_brute_force_random_offsets():
    K, N = 1 << 10, 16
    rng = np.random.default_rng(9)
    offs = rng.integers(0, K, size=replica_limit(4))
    ids, failed = random_ring(11, N, K, 8)
    fast = ring_losses(ids, failed, "random", 4, K, offsets=offs)
    slow = brute_losses(ids, failed, "random", 4, K, "ample", offsets=offs)
    assert fast.tolist() == slow.tolist()


def test_model_offsets_agree_with_allocation():
    K, N = 1 << 32, 500
    for kind in ("successor", "predecessor", "finger"):
        cfg = AllocationConfig(kind, K, N, 4, 12, check_spare=False)
        offs = model_offsets(kind, K, N, 12)
        assert [allocate(cfg, m, 0) for m in range(1, 13)] == offs.tolist()


def test_no_failures_no_loss():
    res = placement_loss_model(PlacementModel(N=100, failed=0, r_max=4, samples=20))
    for kind in MODEL_KINDS:
        assert res[kind].losses.tolist() == [0, 0, 0, 0]


def test_single_replica_always_loses_half():
    res = placement_loss_model(PlacementModel(N=500, failed=250, r_max=2, samples=200, seed=1))
    for kind in MODEL_KINDS:
        kl = res[kind]
        assert kl.probability(1) == 1.0
        assert kl.conditional_fraction(1) == pytest.approx(0.5, abs=0.02)


def test_more_replicas_never_lose_more():
    res = placement_loss_model(PlacementModel(N=200, failed=100, r_max=10, samples=300, seed=2))
    for kind in MODEL_KINDS:
        kl = res[kind]
        if kind != "block":
            # a lost key for r is also lost for every smaller r
            assert all(a >= b for a, b in zip(kl.losses, kl.losses[1:]))
        assert kl.interval(3)[0] <= kl.probability(3) <= kl.interval(3)[1]


def test_model_is_seeded():
    m = PlacementModel(N=100, failed=50, r_max=6, samples=50, seed=5)
    a = placement_loss_model(m)
    b = placement_loss_model(m)
    for kind in MODEL_KINDS:
        assert a[kind].losses.tolist() == b[kind].losses.tolist()


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0.03 < hi < 0.04
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi


def test_model_validation():
    with pytest.raises(ValueError):
        PlacementModel(N=10, failed=11)
    with pytest.raises(ValueError):
        PlacementModel(index_limit="tight")
