"""Monte Carlo model of data loss when half of a ring fails at once.

Each sample places N nodes uniformly and marks a random subset failed.
For every key d the replica group is built the way core maintenance builds
it: walk m = 1, 2, ... and collect distinct owners of h(m, d) until r are
found or R_MAX is reached. By default R_MAX = 2r + 8, enough that groups
practically always reach r distinct holders; "recommended" uses the
smaller r + ceil(1.645 sqrt(r)), under which some groups fall short. Data is lost for r if
some key's whole group is on failed nodes.

The search is depth first over pieces of keyspace on which the owners of
h(1, d) .. h(m, d) are constant. A piece stops as soon as a live owner
appears, which makes each sample cheap: only keys whose first few replica
locations all failed are ever refined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.stats import binomtest

from .allocation import spare_indices

MODEL_KINDS = ("successor", "predecessor", "finger", "random", "block")
_STACK = 4096


@njit(cache=True)
def _owner_span(ids, x, K):
    """Index of the node owning x and the number of ids from x to that node's end."""
    N = ids.shape[0]
    i = np.searchsorted(ids, x)
    if i < N:
        return i, ids[i] + 1 - x
    return 0, K - x + ids[0] + 1


@njit(cache=True)
def _explore(ids, failed, K, offs, a0, b0, weight, lam, M, r_cap, out, path, stack):
    """Refine keys [a0, b0) and add lost measure to out[r-1] for every r they lose.

    offs[m-1] is the location offset of index m. Each key stands for `weight`
    keys with the same replica locations. Returns the largest r lost by
    any piece.
    """
    st_a = stack[0]
    st_b = stack[1]
    st_lvl = stack[2]
    st_own = stack[3]
    st_dc = stack[4]
    worst = 0
    # level 0 is a virtual parent covering [a0, b0)
    st_a[0] = a0
    st_b[0] = b0
    st_lvl[0] = 0
    st_own[0] = -1
    st_dc[0] = 0
    top = 1
    while top > 0:
        top -= 1
        a = st_a[top]
        b = st_b[top]
        lvl = st_lvl[top]
        dc = st_dc[top]
        if lvl > 0:
            path[lvl] = st_own[top]
        m = lvl + 1
        o = offs[m - 1] % K
        d = a
        while d < b:
            x = (d + o) % K
            own, span = _owner_span(ids, x, K)
            e = min(b, d + span)
            if failed[own]:
                seen = False
                for k in range(1, lvl + 1):
                    if path[k] == own:
                        seen = True
                        break
                ndc = dc if seen else dc + 1
                if ndc >= r_cap or m >= M:
                    # every index up to M failed, or r_cap distinct failed holders
                    R = r_cap
                else:
                    R = -1
                    if top >= _STACK:
                        raise RuntimeError("placement search stack overflow")
                    st_a[top] = d
                    st_b[top] = e
                    st_lvl[top] = m
                    st_own[top] = own
                    st_dc[top] = ndc
                    top += 1
            else:
                # first live holder has rank dc + 1 at index m
                R = max(dc, lam[m])
            if R > 0:
                for r in range(R):
                    out[r] += (e - d) * weight
                worst = max(worst, R)
            d = e
    return worst


@njit(cache=True)
def _block_run(ids, failed, K, unit, r, Rm, lam, offs, out, path, stack):
    """Lost keys for core groups of r under block allocation with R_MAX = Rm."""
    B = Rm * unit
    for m in range(Rm):
        offs[m] = (m + 1) * unit
    out[:] = 0
    # every unit of a block maps offset t to base + t + m*unit, so one
    # search per block covers all of its units
    for base in range(0, K, B):
        full = min(Rm, (K - base) // unit)
        if full > 0:
            _explore(ids, failed, K, offs, base, base + unit, full, lam, Rm, r, out, path, stack)
        tail = base + full * unit
        if full < Rm and tail < K:
            _explore(ids, failed, K, offs, tail - full * unit, K - full * unit, 1, lam, Rm, r, out, path, stack)
    return out[r - 1]


@njit(cache=True)
def _sample_ring(N, failed_count, K):
    ids = np.unique(np.random.randint(0, K, N))
    while ids.shape[0] < N:
        ids = np.unique(np.concatenate((ids, np.random.randint(0, K, N - ids.shape[0]))))
    perm = np.random.permutation(N)
    failed = np.zeros(N, np.bool_)
    for i in range(failed_count):
        failed[perm[i]] = True
    return ids, failed


@njit(cache=True)
def _sample_loop(N, failed_count, K, r_max, fixed, lam, limits, samples, seed, lost, fsum, fsq):
    np.random.seed(seed)
    unit = K // N
    nk = fixed.shape[0]  # fixed translation kinds; random offsets are drawn per sample
    M = fixed.shape[1]
    offs = np.empty(M, np.int64)
    out = np.zeros(r_max, np.int64)
    path = np.empty(M + 2, np.int64)
    stack = np.empty((5, _STACK), np.int64)
    for _ in range(samples):
        ids, failed = _sample_ring(N, failed_count, K)
        for kind in range(nk + 1):
            if kind < nk:
                for m in range(M):
                    offs[m] = fixed[kind, m]
            else:
                for m in range(M):
                    offs[m] = np.random.randint(0, K)
            out[:] = 0
            _explore(ids, failed, K, offs, 0, K, 1, lam, M, r_max, out, path, stack)
            for r in range(r_max):
                if out[r] > 0:
                    f = out[r] / K
                    lost[kind, r] += 1
                    fsum[kind, r] += f
                    fsq[kind, r] += f * f
        # block allocation: block size depends on r through R_MAX
        for r in range(1, r_max + 1):
            _block_run(ids, failed, K, unit, r, limits[r], lam, offs, out, path, stack)
            if out[r - 1] > 0:
                f = out[r - 1] / K
                lost[nk + 1, r - 1] += 1
                fsum[nk + 1, r - 1] += f
                fsq[nk + 1, r - 1] += f * f


INDEX_LIMITS = ("ample", "recommended")


def replica_limit(r: int, policy: str = "ample") -> int:
    """R_MAX used for a core group of r distinct holders."""
    if policy == "ample":
        return 2 * r + 8
    if policy == "recommended":
        return r + spare_indices(r)
    raise ValueError(f"unknown index limit policy {policy!r}")


def _lambda_table(r_max: int, policy: str) -> np.ndarray:
    """lam[pi] = largest r whose index limit is below pi (lost if the first live index is pi)."""
    M = replica_limit(r_max, policy)
    lam = np.zeros(M + 2, np.int64)
    for pi in range(M + 2):
        lam[pi] = max((r for r in range(1, r_max + 1) if replica_limit(r, policy) < pi), default=0)
    return lam


def model_offsets(kind: str, K: int, N: int, count: int) -> np.ndarray:
    """Offsets h(m, d) - d for the translation kinds, m = 1..count."""
    u = K // N
    ms = range(1, count + 1)
    if kind == "successor":
        vals = [(m * u) % K for m in ms]
    elif kind == "predecessor":
        vals = [(-m * u) % K for m in ms]
    elif kind == "finger":
        vals = [((1 << m) * K // N) % K for m in ms]
    else:
        raise ValueError(f"no fixed offsets for {kind!r}")
    return np.array(vals, dtype=np.int64)


@dataclass(frozen=True)
class PlacementModel:
    N: int = 500
    failed: int = 250
    r_max: int = 24
    K: int = 1 << 32
    samples: int = 100_000
    seed: int = 0
    index_limit: str = "ample"

    def __post_init__(self):
        if self.index_limit not in INDEX_LIMITS:
            raise ValueError(f"index_limit must be one of {INDEX_LIMITS}")
        if not 0 <= self.failed <= self.N:
            raise ValueError("failed count must lie in [0, N]")
        if self.N < 2 or self.r_max < 1 or self.samples < 1:
            raise ValueError("N >= 2, r_max >= 1 and samples >= 1 required")
        if self.K >= 1 << 62 or self.K < 4 * self.N:
            raise ValueError("K must satisfy 4N <= K < 2^62")


@dataclass
class KindLoss:
    kind: str
    samples: int
    losses: np.ndarray  # index r-1
    frac_sum: np.ndarray
    frac_sq: np.ndarray
    ci: list[tuple[float, float]] = field(default_factory=list)

    def probability(self, r: int) -> float:
        return self.losses[r - 1] / self.samples

    def interval(self, r: int) -> tuple[float, float]:
        return self.ci[r - 1]

    def conditional_fraction(self, r: int) -> float:
        k = self.losses[r - 1]
        return self.frac_sum[r - 1] / k if k else math.nan

    def conditional_sd(self, r: int) -> float:
        k = self.losses[r - 1]
        if k < 2:
            return math.nan
        mean = self.frac_sum[r - 1] / k
        var = max(0.0, (self.frac_sq[r - 1] - k * mean * mean) / (k - 1))
        return math.sqrt(var)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def placement_loss_model(model: PlacementModel, confidence: float = 0.95) -> dict[str, KindLoss]:
    fixed_kinds = ("successor", "predecessor", "finger")
    limits = np.array([0] + [replica_limit(r, model.index_limit) for r in range(1, model.r_max + 1)], np.int64)
    M = int(limits[-1])
    fixed = np.stack([model_offsets(k, model.K, model.N, M) for k in fixed_kinds])
    order = (*fixed_kinds, "random", "block")
    shape = (len(order), model.r_max)
    lost = np.zeros(shape, np.int64)
    fsum = np.zeros(shape)
    fsq = np.zeros(shape)
    if model.failed > 0:
        _sample_loop(
            model.N, model.failed, model.K, model.r_max, fixed, _lambda_table(model.r_max, model.index_limit), limits,
            model.samples, model.seed, lost, fsum, fsq,
        )
    out = {}
    for i, kind in enumerate(order):
        kl = KindLoss(kind, model.samples, lost[i].copy(), fsum[i].copy(), fsq[i].copy())
        kl.ci = [wilson_interval(k, model.samples, confidence) for k in kl.losses]
        out[kind] = kl
    return {k: out[k] for k in MODEL_KINDS}


def ring_losses(
    ids, failed, kind: str, r_max: int, K: int, index_limit: str = "ample", offsets=None
) -> np.ndarray:
    """Lost key count for r = 1..r_max on one given ring (used to check the search)."""
    ids = np.asarray(ids, dtype=np.int64)
    order = np.argsort(ids)
    ids = ids[order]
    failed = np.asarray(failed, dtype=np.bool_)[order]
    N = ids.shape[0]
    unit = K // N
    lam = _lambda_table(r_max, index_limit)
    M = replica_limit(r_max, index_limit)
    out = np.zeros(r_max, np.int64)
    path = np.empty(M + 2, np.int64)
    stack = np.empty((5, _STACK), np.int64)
    if kind == "block":
        res = np.zeros(r_max, np.int64)
        offs = np.empty(M, np.int64)
        for r in range(1, r_max + 1):
            res[r - 1] = _block_run(ids, failed, K, unit, r, replica_limit(r, index_limit), lam, offs, out, path, stack)
        return res
    offs = np.asarray(offsets if offsets is not None else model_offsets(kind, K, N, M), dtype=np.int64)
    _explore(ids, failed, K, offs, 0, K, 1, lam, M, r_max, out, path, stack)
    return out
