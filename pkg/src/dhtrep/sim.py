"""Deterministic discrete-event simulation of a replicated Chord ring.

One time unit is one network hop. Protocol actions (a maintenance run, a
stabilize round, one fetch attempt) execute atomically inside the event
that triggers them; the hops they take are charged to the fetch latency.
A fetch that has to wait (timeout, empty result) is re-queued at its own
launch time plus the latency accumulated so far.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
import random
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

from .allocation import AllocationConfig, spare_indices
from .dhash import DHash
from .dynamic import DynamicReplication
from .messages import CATEGORIES, DATA, OVERHEAD, REPAIR, Traffic
from .protocol import FOUND, NOT_FOUND, FetchState, Timeouts
from .ring import ChordRing
from .store import HolderIndex

ALGORITHMS = ("dhash", "dyn-successor", "dyn-predecessor", "dyn-block", "dyn-finger", "dyn-random")
CHURN_MODES = ("steady", "catastrophe", "none")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: int = 200
    bits: int = 32
    algorithm: str = "dhash"
    r: int = 6  # DHash: replicas on the owner's r successors
    r_min: int = 7
    r_max: int = 0  # 0 means r_min + ceil(1.645 * sqrt(r_min))
    S: float = 8.0
    items_per_node: int = 50
    item_size: int = 1024
    churn: str = "steady"
    catastrophe_fraction: float = 0.3
    fetch_count: int = 50_000
    seed: int = 1
    repeats: int = 1
    successor_list_len: int = 10
    finger_count: int = 12
    fingers_per_round: int = 0  # 0 means refresh every finger each round
    repair_minutes: float = 30.0
    lifetime_hours: float = 24.0
    replacement_minutes: float = 1.0
    churn_reading: str = "per-node"
    hop_seconds: float = 0.1
    rtt_timeout: int = 0  # 0 means the size-based policy
    recursive_timeout: int = 0
    retry_cap: int = 8
    catastrophe_cap_hours: float = 12.0
    core_first: bool = True
    remove_single: bool = False
    bloom_bits: int = 10
    bloom_k: int = 7
    warmup_rounds: int = 10
    allocation_seed: int = 0

    def validate(self) -> ScenarioConfig:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.churn not in CHURN_MODES:
            raise ConfigError(f"unknown churn mode {self.churn!r}")
        if self.churn_reading not in ("per-node", "system"):
            raise ConfigError("churn_reading must be per-node or system")
        positive = (
            "nodes", "bits", "S", "items_per_node", "item_size", "fetch_count", "repeats",
            "successor_list_len", "finger_count", "repair_minutes", "lifetime_hours", "hop_seconds",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.nodes < 2:
            raise ConfigError("need at least two nodes")
        if self.nodes > (1 << self.bits) // 4:
            raise ConfigError("identifier space too small for the node count")
        if not 0 <= self.catastrophe_fraction < 1:
            raise ConfigError("catastrophe_fraction must be in [0, 1)")
        if self.r < 0 or self.r_min < 1 or (self.r_max and self.r_max < self.r_min):
            raise ConfigError("replica counts out of range")
        if self.replacement_minutes < 0 or self.retry_cap < 0:
            raise ConfigError("negative delay or retry cap")
        if self.algorithm.startswith("dyn-"):
            try:
                self.allocation()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    # -- derived quantities -----------------------------------------------------

    @property
    def units_per_hour(self) -> float:
        return 3600.0 / self.hop_seconds

    @property
    def half_life_hours(self) -> float:
        if self.churn_reading == "system":
            return self.nodes * self.lifetime_hours / 2
        return self.lifetime_hours / 2

    @property
    def horizon(self) -> float:
        return self.half_life_hours * self.units_per_hour

    @property
    def maintenance_interval(self) -> float:
        return self.horizon / self.S

    @property
    def repair_interval(self) -> float:
        return self.repair_minutes / 60 * self.units_per_hour

    @property
    def effective_r_max(self) -> int:
        return self.r_max or self.r_min + spare_indices(self.r_min)

    def timeouts(self) -> Timeouts:
        return Timeouts.for_size(self.nodes, self.rtt_timeout or None, self.recursive_timeout or None)

    def allocation(self) -> AllocationConfig:
        kind = self.algorithm.removeprefix("dyn-")
        return AllocationConfig(
            kind, 1 << self.bits, self.nodes, self.r_min, self.effective_r_max, self.allocation_seed
        )

    def config_hash(self) -> str:
        text = ";".join(f"{k}={v}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def config_from_mapping(values: dict[str, str], base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build a config from string values (config file or --set overrides)."""
    base = base or ScenarioConfig()
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    kwargs = {}
    for key, raw in values.items():
        name = key.strip().replace("-", "_")
        if name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = types[name]
        raw = raw.strip()
        try:
            if kind == "bool":
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                kwargs[name] = raw.lower() in ("true", "1", "yes")
            elif kind == "int":
                kwargs[name] = int(raw)
            elif kind == "float":
                kwargs[name] = float(raw)
            else:
                kwargs[name] = raw
        except ValueError:
            raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return replace(base, **kwargs).validate()


# -- churn -------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class ChurnEvent:
    time: float
    kind: str  # "fail" or "join"
    node: int  # -1 for a system-wide failure whose victim is picked when it fires


def steady_state_churn(cfg: ScenarioConfig, ids, rng: random.Random, horizon: float | None = None) -> list[ChurnEvent]:
    """Failure and replacement events for one run.

    Per-node reading: every node lives Exp(lifetime) and is replaced after
    a fixed delay by a node with a fresh id, which gets its own lifetime.
    System reading: failures form one Poisson stream of rate 1/lifetime.
    """
    if cfg.churn != "steady":
        return []
    horizon = cfg.horizon if horizon is None else horizon
    mean = cfg.lifetime_hours * cfg.units_per_hour
    delay = cfg.replacement_minutes / 60 * cfg.units_per_hour
    K = 1 << cfg.bits
    used = set(ids)
    events: list[ChurnEvent] = []

    def fresh_id() -> int:
        while True:
            x = rng.randrange(K)
            if x not in used:
                used.add(x)
                return x

    if cfg.churn_reading == "system":
        t = 0.0
        while True:
            t += rng.expovariate(1 / mean)
            if t >= horizon:
                break
            events.append(ChurnEvent(t, "fail", -1))
            events.append(ChurnEvent(t + delay, "join", fresh_id()))
        return sorted(events)

    pending = [(rng.expovariate(1 / mean), node) for node in sorted(ids)]
    while pending:
        t, node = pending.pop()
        if t >= horizon:
            continue
        events.append(ChurnEvent(t, "fail", node))
        new = fresh_id()
        events.append(ChurnEvent(t + delay, "join", new))
        pending.append((t + delay + rng.expovariate(1 / mean), new))
    return sorted(events)


# -- metrics -----------------------------------------------------------------------------


@dataclass
class MetricsLog:
    seed: int
    algorithm: str
    nodes: int
    latency: list[int] = field(default_factory=list)
    probes: list[int] = field(default_factory=list)
    ok: list[bool] = field(default_factory=list)
    unavailable: int = 0  # fetches for keys with no live replica at launch
    bandwidth: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    messages: dict[str, int] = field(default_factory=dict)
    data_bytes: int = 0
    loss_events: int = 0
    failures: int = 0
    joins: int = 0
    events: int = 0
    maintenance_runs: int = 0

    @property
    def launched(self) -> int:
        return len(self.latency)

    def _ok_values(self, xs):
        return [x for x, good in zip(xs, self.ok) if good]

    @property
    def mean_latency(self) -> float:
        vals = self._ok_values(self.latency)
        return statistics.fmean(vals) if vals else math.nan

    @property
    def mean_probes(self) -> float:
        vals = self._ok_values(self.probes)
        return statistics.fmean(vals) if vals else math.nan

    @property
    def success_rate(self) -> float:
        attempted = self.launched - self.unavailable
        return sum(self.ok) / attempted if attempted else math.nan

    @property
    def overhead(self) -> int:
        return self.bandwidth[OVERHEAD]

    @property
    def data_moved(self) -> int:
        return self.bandwidth[DATA]

    @property
    def data_moved_fraction(self) -> float:
        return self.data_moved / self.data_bytes if self.data_bytes else math.nan

    @property
    def overhead_per_node(self) -> float:
        return self.overhead / self.nodes

    def summary(self) -> dict[str, float]:
        return {
            "latency": self.mean_latency,
            "probes": self.mean_probes,
            "success": self.success_rate,
            "overhead": float(self.overhead),
            "data_moved": float(self.data_moved),
            "chord_repair": float(self.bandwidth[REPAIR]),
            "fetch_bytes": float(self.bandwidth["fetch"]),
            "data_moved_fraction": self.data_moved_fraction,
            "loss_events": float(self.loss_events),
            "unavailable": float(self.unavailable),
        }


# -- the event loop --------------------------------------------------------------------------

_STABILIZE, _MAINTAIN, _FAIL, _JOIN, _FETCH, _RETRY = range(6)


def build_protocol(cfg: ScenarioConfig, ring: ChordRing, registry: HolderIndex):
    timeouts = cfg.timeouts()
    if cfg.algorithm == "dhash":
        return DHash(ring, r=cfg.r, timeouts=timeouts, registry=registry)
    return DynamicReplication(
        ring,
        cfg.allocation(),
        timeouts=timeouts,
        registry=registry,
        core_first=cfg.core_first,
        remove_single=cfg.remove_single,
        bloom_bits=cfg.bloom_bits,
        bloom_k=cfg.bloom_k,
    )


class Simulation:
    """One seeded run. Build, warm up, then `run()`."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None, trace: bool = False):
        self.cfg = cfg.validate()
        self.seed = cfg.seed if seed is None else seed
        s = self.seed
        self.rng_ids = random.Random(f"{s}:ids")
        self.rng_items = random.Random(f"{s}:items")
        self.rng_churn = random.Random(f"{s}:churn")
        self.rng_fetch = random.Random(f"{s}:fetch")
        self.rng_choice = random.Random(f"{s}:choice")
        self.rng_phase = random.Random(f"{s}:phase")
        self.trace: list[tuple] | None = [] if trace else None
        self.traffic = Traffic(trace=[] if trace else None)
        self.registry = HolderIndex(on_loss=self._on_loss)
        self.ring = ChordRing(
            bits=cfg.bits,
            successor_list_len=cfg.successor_list_len,
            finger_count=cfg.finger_count,
            traffic=self.traffic,
            fingers_per_round=cfg.fingers_per_round or None,
        )
        self.proto = build_protocol(cfg, self.ring, self.registry)
        self.timeouts = cfg.timeouts()
        self.log = MetricsLog(self.seed, cfg.algorithm, cfg.nodes)
        self.keys: list[int] = []
        self.lost: set[int] = set()
        self._queue: list = []
        self._seq = itertools.count()
        self._measuring = False
        self._inflight = 0
        self.now = 0.0
        self.hooks: list[Callable[[Simulation], None]] = []

    # -- setup ---------------------------------------------------------------

    def _on_loss(self, key: int) -> None:
        self.lost.add(key)
        if self._measuring:
            self.log.loss_events += 1

    def setup(self) -> None:
        cfg = self.cfg
        K = 1 << cfg.bits
        ids = self.rng_ids.sample(range(K), cfg.nodes)
        self.ring.build(ids)
        live = list(self.ring.live)
        self.keys = self.rng_items.sample(range(K), cfg.nodes * cfg.items_per_node)
        for key in self.keys:
            origin = live[self.rng_items.randrange(len(live))]
            self.proto.put(origin, self.proto.make_item(key, cfg.item_size))
        self.warm_up()
        self.traffic.reset()
        self.log.data_bytes = len(self.keys) * cfg.item_size

    def warm_up(self) -> int:
        """Maintenance rounds over all nodes until a round moves no data."""
        for rnd in range(1, self.cfg.warmup_rounds + 1):
            before = self.traffic.bytes[DATA]
            for node_id in list(self.ring.live):
                self.proto.maintain(self.ring.nodes[node_id])
            if self.traffic.bytes[DATA] == before:
                return rnd
        return self.cfg.warmup_rounds

    # -- queue --------------------------------------------------------------------

    def push(self, time: float, kind: int, payload) -> None:
        heapq.heappush(self._queue, (time, next(self._seq), kind, payload))

    def _schedule_node(self, node_id: int, start: float) -> None:
        rp = self.cfg.repair_interval
        mi = self.cfg.maintenance_interval
        self.push(start + self.rng_phase.uniform(0, rp), _STABILIZE, node_id)
        self.push(start + self.rng_phase.uniform(0, mi), _MAINTAIN, node_id)

    def _fetch_plan(self) -> list[tuple[float, int, float]]:
        cfg = self.cfg
        rng = self.rng_fetch
        plan = []
        for _ in range(cfg.fetch_count):
            key = self.keys[rng.randrange(len(self.keys))]
            pick = rng.random()
            plan.append((key, pick))
        if cfg.churn == "catastrophe":
            times = [0.0] * cfg.fetch_count
        else:
            times = sorted(rng.uniform(0, cfg.horizon) for _ in range(cfg.fetch_count))
        return [(t, k, p) for t, (k, p) in zip(times, plan)]

    # -- run -------------------------------------------------------------------------

    def run(self) -> MetricsLog:
        if not self.keys:
            self.setup()
        cfg = self.cfg
        ring = self.ring
        self._measuring = True
        horizon = cfg.horizon
        for node_id in list(ring.live):
            self._schedule_node(node_id, 0.0)
        if cfg.churn == "steady":
            for ev in steady_state_churn(cfg, list(ring.live), self.rng_churn):
                self.push(ev.time, _FAIL if ev.kind == "fail" else _JOIN, ev.node)
        elif cfg.churn == "catastrophe":
            k = math.floor(cfg.catastrophe_fraction * cfg.nodes)
            for node_id in self.rng_churn.sample(list(ring.live), k):
                ring.fail(node_id)
                self.log.failures += 1
        for t, key, pick in self._fetch_plan():
            self.push(t, _FETCH, (key, pick))
            self._inflight += 1
        while self._queue:
            time, seq, kind, payload = heapq.heappop(self._queue)
            if time > horizon and kind not in (_RETRY, _FETCH):
                if self._inflight == 0:
                    break
                if cfg.churn != "catastrophe":
                    continue
            if time < self.now:
                raise RuntimeError("virtual clock moved backwards")
            self.now = ring.now = time
            self.log.events += 1
            if self.trace is not None:
                self.trace.append((time, seq, kind, payload if not isinstance(payload, FetchState) else payload.key))
            self._dispatch(time, kind, payload)
            for hook in self.hooks:
                hook(self)
            if self._inflight == 0 and time > horizon:
                break
        log = self.log
        log.bandwidth = dict(self.traffic.bytes)
        log.messages = dict(sorted(self.traffic.counts.items()))
        return log

    def _dispatch(self, time: float, kind: int, payload) -> None:
        ring = self.ring
        cfg = self.cfg
        if kind == _STABILIZE:
            if ring.alive(payload):
                ring.stabilize(ring.nodes[payload])
                self.push(time + cfg.repair_interval, _STABILIZE, payload)
        elif kind == _MAINTAIN:
            if ring.alive(payload):
                self.proto.maintain(ring.nodes[payload])
                self.log.maintenance_runs += 1
                self.push(time + cfg.maintenance_interval, _MAINTAIN, payload)
        elif kind == _FAIL:
            victim = payload
            if victim == -1:
                live = list(ring.live)
                victim = live[self.rng_churn.randrange(len(live))]
            if ring.alive(victim) and len(ring.live) > 1:
                ring.fail(victim)
                self.log.failures += 1
        elif kind == _JOIN:
            live = list(ring.live)
            boot = live[self.rng_churn.randrange(len(live))]
            ring.join(payload, bootstrap=boot)
            self.log.joins += 1
            self._schedule_node(payload, time)
        elif kind == _FETCH:
            key, pick = payload
            live = ring.live
            origin = live[int(pick * len(live))]
            st = FetchState(origin, key)
            st.trail.append(str(time))
            if key not in self.registry:
                self.log.unavailable += 1
                self._finish(st, False)
                return
            self._attempt(st, time)
        elif kind == _RETRY:
            st, started = payload
            self._attempt(st, started)

    def _attempt(self, st: FetchState, started: float) -> None:
        ring = self.ring
        if not ring.alive(st.origin):
            self._finish(st, False)
            return
        outcome = self.proto.fetch_step(st, self.rng_choice)
        if outcome == FOUND:
            self._finish(st, True)
            return
        if outcome == NOT_FOUND:
            st.resets += 1
            st.latency += self.timeouts.recursive
        if self.cfg.churn == "catastrophe":
            cap = self.cfg.catastrophe_cap_hours * self.cfg.units_per_hour
            if st.latency > cap:
                self._finish(st, False)
                return
        elif st.retries > self.cfg.retry_cap:
            self._finish(st, False)
            return
        self.push(started + st.latency, _RETRY, (st, started))

    def _finish(self, st: FetchState, ok: bool) -> None:
        self.log.latency.append(st.latency)
        self.log.probes.append(st.probes)
        self.log.ok.append(ok)
        self._inflight -= 1


def run_once(cfg: ScenarioConfig, seed: int | None = None) -> MetricsLog:
    sim = Simulation(cfg, seed)
    sim.setup()
    return sim.run()


def run_scenario(cfg: ScenarioConfig) -> list[MetricsLog]:
    """One MetricsLog per repeat; repeat i uses seed cfg.seed + i."""
    cfg.validate()
    return [run_once(cfg, cfg.seed + i) for i in range(cfg.repeats)]


def catastrophe(cfg: ScenarioConfig, fraction: float) -> MetricsLog:
    return run_once(replace(cfg, churn="catastrophe", catastrophe_fraction=fraction))
