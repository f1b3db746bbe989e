"""Reliability arithmetic: run probabilities, maintenance frequency, probes, collisions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np


@dataclass(frozen=True)
class RunProblemParams:
    p: float
    r: int
    N: int

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.r < 1:
            raise ValueError("r must be at least 1")
        if self.N < 0:
            raise ValueError("N must be non-negative")


def _params(p, r=None, N=None) -> RunProblemParams:
    if isinstance(p, RunProblemParams):
        return p
    return RunProblemParams(p, r, N)


def run_coefficients(p: float, r: int, N: int) -> list[float]:
    """c_0..c_N: probability that the first run of r successes ends at trial i.

    These are the power-series coefficients of
        p^r s^r (1 - p s) / (1 - s + (1 - p) p^r s^(r+1)),
    obtained from the recurrence its denominator induces.
    """
    q = 1.0 - p
    pr = p**r
    a = q * pr
    c = [0.0] * (N + 1)
    for i in range(r, N + 1):
        num = pr if i == r else (-pr * p if i == r + 1 else 0.0)
        back = c[i - r - 1] if i - r - 1 >= 0 else 0.0
        c[i] = math.fsum((c[i - 1], -a * back, num))
    return c


def run_probability(p, r=None, N=None) -> float:
    """P(at least r consecutive successes in N Bernoulli(p) trials)."""
    prm = _params(p, r, N)
    p, r, N = prm.p, prm.r, prm.N
    if N < r or p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    total = math.fsum(run_coefficients(p, r, N)[r:])
    return min(1.0, max(0.0, total))


def run_probability_oracle(p, r=None, N=None) -> float:
    """Same quantity by dynamic programming over the current run length."""
    prm = _params(p, r, N)
    p, r, N = prm.p, prm.r, prm.N
    q = 1.0 - p
    state = [0.0] * r  # state[k]: no run yet, trailing run of length k
    state[0] = 1.0
    done = 0.0
    for _ in range(N):
        nxt = [0.0] * r
        nxt[0] = q * math.fsum(state)
        for k in range(r - 1):
            nxt[k + 1] = p * state[k]
        done += p * state[r - 1]
        state = nxt
    return done


def run_probability_enumerated(p: float, r: int, N: int) -> float:
    """Brute force over all 2^N outcome sequences; only for small N."""
    if N > 20:
        raise ValueError("enumeration is limited to N <= 20")
    q = 1.0 - p
    terms = []
    for seq in itertools.product((0, 1), repeat=N):
        run = best = 0
        for x in seq:
            run = run + 1 if x else 0
            best = max(best, run)
        if best >= r:
            k = sum(seq)
            terms.append(p**k * q ** (N - k))
    return math.fsum(terms)


def missing_fraction(S: float, r: int | None = None, refined: bool = False) -> float:
    """Per-holder probability that a replica is missing between repairs."""
    if S < 1:
        raise ValueError("S must be at least 1")
    if refined:
        if r is None:
            raise ValueError("the refined fraction needs r")
        return (2 * r + 1) / (4 * r * S)
    return 1.0 / (2 * S)


def fail_probability(N: int, r: int, S: float, refined: bool = False) -> float:
    """P(some maintenance interval in one half life sees a loss-causing run)."""
    p = missing_fraction(S, r, refined)
    run = run_probability(min(p, 1.0), r, N)
    if run >= 1.0:
        return 1.0
    return -math.expm1(S * math.log1p(-run))


def min_repairs(N: int, r: int, target: float = 1e-6, refined: bool = False, s_limit: int = 1 << 40) -> int:
    """Smallest integer S with fail_probability(N, r, S) <= target."""
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")

    def ok(S: int) -> bool:
        return fail_probability(N, r, S, refined) <= target

    if ok(1):
        return 1
    hi = 2
    while not ok(hi):
        hi *= 2
        if hi > s_limit:
            raise ValueError(f"no S up to {s_limit} reaches {target} for N={N}, r={r}")
    lo = hi // 2  # known to fail
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def expected_probes(S: float) -> float:
    if S < 1:
        raise ValueError("S must be at least 1")
    return 2 * S / (2 * S - 1)


def normal_quantile(confidence: float) -> float:
    """One-sided normal quantile, rounded to three places (1.645 at 95%)."""
    if not 0.5 < confidence < 1.0:
        raise ValueError("confidence must lie in (0.5, 1)")
    return round(NormalDist().inv_cdf(confidence), 3)


def collision_bound(r: int, K: int, N: int, confidence: float = 0.95) -> float:
    """Keyspace that r consecutive node gaps stay below with the given confidence."""
    if r < 1 or N < 1:
        raise ValueError("r and N must be positive")
    z = normal_quantile(confidence)
    return (r + z * math.sqrt(r)) * K / N


def collision_coverage(
    r: int,
    N: int = 500,
    K: int = 1 << 32,
    trials: int = 100_000,
    seed: int = 0,
    confidence: float = 0.95,
    batch: int = 5_000,
) -> float:
    """Monte Carlo fraction of rings where the span of r consecutive gaps is within the bound."""
    if r >= N:
        raise ValueError("need r < N")
    bound = collision_bound(r, K, N, confidence)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        ids = np.sort(rng.integers(0, K, size=(b, N), dtype=np.int64), axis=1)
        start = rng.integers(0, N, size=b)
        rows = np.arange(b)
        end = start + r
        a = ids[rows, start]
        z = ids[rows, end % N] + np.where(end >= N, K, 0)
        hits += int(np.count_nonzero((z - a) <= bound))
        done += b
    return hits / trials


# -- tables ---------------------------------------------------------------------------


def fig1_table(N: int = 500, target: float = 1e-6, r_values=range(4, 21), refined: bool = False):
    return [(r, min_repairs(N, r, target, refined)) for r in r_values]


def fig2_table(
    N_values=(50, 100, 200, 500), r_values=(6, 8, 10, 12, 15), target: float = 1e-6, refined: bool = False
):
    return [(N, r, min_repairs(N, r, target, refined)) for r in r_values for N in N_values]
