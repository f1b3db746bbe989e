"""Command line: simulate, sweep, analyze, selftest.

Config and sweep files are flat `key = value` text; `#` starts a comment.
Every CSV starts with a metadata row beginning with `#`.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .analysis import (
    collision_bound,
    collision_coverage,
    expected_probes,
    fig1_table,
    fig2_table,
    run_probability,
    run_probability_enumerated,
    run_probability_oracle,
)
from .sim import ALGORITHMS, ConfigError, MetricsLog, ScenarioConfig, config_from_mapping, run_once

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3
WORKERS_ENV = "DHTREP_WORKERS"

AXES = {
    "S": "S",
    "N": "nodes",
    "r": "r",
    "items-per-node": "items_per_node",
    "catastrophe-fraction": "catastrophe_fraction",
}

SWEEP_COLUMNS = (
    "algorithm", "axis", "value", "status", "repeats",
    "latency_mean", "latency_se", "probes_mean", "probes_se", "success_mean",
    "overhead_mean", "overhead_se", "overhead_per_node_mean",
    "data_moved_mean", "data_moved_se", "data_moved_fraction_mean", "data_moved_fraction_se",
    "chord_repair_mean", "fetch_bytes_mean", "loss_events_total",
)


def read_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_sets(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path: str | None, meta: dict[str, str], header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["# dhtrep " + __version__] + [f"{k}={v}" for k, v in meta.items()])
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    text = buf.getvalue()
    if path and path != "-":
        Path(path).write_text(text, newline="")
    else:
        sys.stdout.write(text)
    return text


def _mean_se(xs: list[float]) -> tuple[float, float]:
    xs = [x for x in xs if not math.isnan(x)]
    if not xs:
        return math.nan, math.nan
    m = statistics.fmean(xs)
    se = statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else 0.0
    return m, se


# -- experiments -----------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    base: ScenarioConfig
    axis: str
    values: tuple[float, ...]
    algorithms: tuple[str, ...]
    output: str = "-"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; expected one of {tuple(AXES)}")
        if not self.values:
            raise ConfigError("sweep value list is empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if not self.algorithms:
            raise ConfigError("algorithm list is empty")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}")

    def cell(self, algorithm: str, value: float) -> ScenarioConfig:
        name = AXES[self.axis]
        cfg = replace(self.base, algorithm=algorithm)
        if self.axis == "r":
            # same copy count for both families: owner plus r successors, or r + 1 core holders
            cfg = replace(cfg, r=int(value), r_min=int(value) + 1, r_max=0)
        elif self.axis == "catastrophe-fraction":
            cfg = replace(cfg, churn="catastrophe", catastrophe_fraction=float(value))
        else:
            kind = type(getattr(cfg, name))
            cfg = replace(cfg, **{name: kind(value)})
        return cfg.validate()

    def cells(self) -> list[tuple[str, float, ScenarioConfig]]:
        return [(a, v, self.cell(a, v)) for a in self.algorithms for v in self.values]


def parse_spec(values: dict[str, str]) -> ExperimentSpec:
    values = dict(values)
    try:
        axis = values.pop("axis")
        raw_values = values.pop("values")
    except KeyError as exc:
        raise ConfigError(f"sweep spec needs {exc.args[0]!r}") from None
    algs = values.pop("algorithms", ",".join(ALGORITHMS))
    output = values.pop("output", "-")
    try:
        vals = tuple(float(v) for v in raw_values.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad sweep values {raw_values!r}") from None
    base = config_from_mapping(values)
    return ExperimentSpec(base, axis, vals, tuple(a.strip() for a in algs.split(",") if a.strip()), output)


def _run_cell(cfg: ScenarioConfig) -> list[MetricsLog]:
    return [run_once(cfg, cfg.seed + i) for i in range(cfg.repeats)]


def summarize(algorithm: str, axis: str, value: float, logs: list[MetricsLog] | None, error: str = ""):
    if logs is None:
        return [algorithm, axis, value, "error:" + error, 0] + [math.nan] * (len(SWEEP_COLUMNS) - 5)
    lat = _mean_se([g.mean_latency for g in logs])
    prb = _mean_se([g.mean_probes for g in logs])
    suc = _mean_se([g.success_rate for g in logs])
    ovh = _mean_se([float(g.overhead) for g in logs])
    opn = _mean_se([g.overhead_per_node for g in logs])
    dat = _mean_se([float(g.data_moved) for g in logs])
    dmf = _mean_se([g.data_moved_fraction for g in logs])
    rep = _mean_se([float(g.bandwidth["chord-repair"]) for g in logs])
    fch = _mean_se([float(g.bandwidth["fetch"]) for g in logs])
    return [
        algorithm, axis, value, "ok", len(logs),
        lat[0], lat[1], prb[0], prb[1], suc[0],
        ovh[0], ovh[1], opn[0],
        dat[0], dat[1], dmf[0], dmf[1],
        rep[0], fch[0], sum(g.loss_events for g in logs),
    ]


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> tuple[list[list], bool]:
    """One summary row per (algorithm, value), in spec order. Returns (rows, all_ok)."""
    cells = spec.cells()
    results: list = [None] * len(cells)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, cfg) for _, _, cfg in cells]
            for i, fut in enumerate(futures):
                try:
                    results[i] = (fut.result(), "")
                except Exception as exc:  # noqa: BLE001 - a failed cell is reported, not fatal
                    results[i] = (None, type(exc).__name__)
    else:
        for i, (_, _, cfg) in enumerate(cells):
            try:
                results[i] = (_run_cell(cfg), "")
            except Exception as exc:  # noqa: BLE001
                results[i] = (None, type(exc).__name__)
    rows = [summarize(a, spec.axis, v, logs, err) for (a, v, _), (logs, err) in zip(cells, results)]
    return rows, all(logs is not None for logs, _ in results)


# -- analysis tables ---------------------------------------------------------------------------


def analysis_table(kind: str, params: dict[str, str]):
    """(metadata, header, rows) for one analysis kind."""
    p = dict(params)

    def take(name, cast, default):
        return cast(p.pop(name)) if name in p else default

    def floats(name, default):
        return tuple(float(x) for x in p.pop(name).split(",")) if name in p else default

    def ints(name, default):
        return tuple(int(x) for x in p.pop(name).split(",")) if name in p else default

    try:
        if kind == "fig1":
            N = take("N", int, 500)
            target = take("target", float, 1e-6)
            refined = take("refined", lambda s: s.lower() in ("1", "true", "yes"), False)
            rs = ints("r", tuple(range(4, 21)))
            meta = {"N": N, "target": target, "refined": refined}
            header = ["r", "S_min"]
            rows = fig1_table(N, target, rs, refined)
        elif kind == "fig2":
            Ns = ints("N", (50, 100, 200, 500))
            rs = ints("r", (6, 8, 10, 12, 15))
            target = take("target", float, 1e-6)
            refined = take("refined", lambda s: s.lower() in ("1", "true", "yes"), False)
            meta = {"target": target, "refined": refined}
            header = ["N", "r", "S_min"]
            rows = fig2_table(Ns, rs, target, refined)
        elif kind in ("fig4", "fig5"):
            from .placement import MODEL_KINDS, PlacementModel, placement_loss_model

            model = PlacementModel(
                N=take("N", int, 500),
                failed=take("failed", int, 250),
                r_max=take("r_max", int, 24),
                samples=take("samples", int, 100_000),
                seed=take("seed", int, 0),
                index_limit=take("index_limit", str, "ample"),
            )
            res = placement_loss_model(model)
            meta = {
                "N": model.N, "failed": model.failed, "samples": model.samples, "seeds": model.seed,
                "index_limit": model.index_limit, "ci": "wilson-95",
            }
            if kind == "fig4":
                header = ["r", "kind", "losses", "p_loss", "ci_low", "ci_high"]
                rows = [
                    (r, k, int(res[k].losses[r - 1]), res[k].probability(r), *res[k].interval(r))
                    for r in range(1, model.r_max + 1)
                    for k in MODEL_KINDS
                ]
            else:
                header = ["r", "kind", "losses", "lost_fraction_mean", "lost_fraction_sd"]
                rows = [
                    (r, k, int(res[k].losses[r - 1]), res[k].conditional_fraction(r), res[k].conditional_sd(r))
                    for r in range(1, model.r_max + 1)
                    for k in MODEL_KINDS
                ]
        elif kind == "probes":
            Ss = floats("S", (1.0, 2.0, 4.0, 8.0))
            meta = {}
            header = ["S", "expected_probes"]
            rows = [(S, expected_probes(S)) for S in Ss]
        elif kind == "collision":
            rs = ints("r", (4, 9, 16))
            N = take("N", int, 500)
            bits = take("bits", int, 32)
            trials = take("trials", int, 100_000)
            seed = take("seed", int, 0)
            K = 1 << bits
            meta = {"N": N, "K": K, "trials": trials, "seeds": seed}
            header = ["r", "bound", "coverage"]
            rows = [(r, collision_bound(r, K, N), collision_coverage(r, N, K, trials, seed + r)) for r in rs]
        else:
            raise ConfigError(f"unknown analysis kind {kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if p:
        raise ConfigError(f"unknown parameters for {kind}: {sorted(p)}")
    return meta, header, rows


# -- selftest -----------------------------------------------------------------------------------


def selftest(out=sys.stdout) -> bool:
    import random

    from .ring import ChordRing

    ok = True

    def report(name: str, good: bool, detail: str) -> None:
        nonlocal ok
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: {detail}", file=out)

    worst = 0.0
    for i in range(1, 20):
        for r in range(1, 9):
            for N in range(1, 65):
                worst = max(worst, abs(run_probability(i * 0.05, r, N) - run_probability_oracle(i * 0.05, r, N)))
    report("run-probability vs dynamic program", worst <= 1e-12, f"max |diff| = {worst:.2e}")

    worst = 0.0
    for p in (0.1, 0.5, 0.85):
        for r in range(1, 6):
            for N in range(0, 13):
                worst = max(worst, abs(run_probability(p, r, N) - run_probability_enumerated(p, r, N)))
    report("run-probability vs enumeration", worst <= 1e-12, f"max |diff| = {worst:.2e}")

    rng = random.Random(7)
    ring = ChordRing(bits=32)
    ring.build(rng.sample(range(1 << 32), 200))
    bad = 0
    hops = []
    for _ in range(2000):
        x = rng.randrange(1 << 32)
        owner, h = ring.find_successor(ring.live[rng.randrange(200)], x)
        bad += owner != ring.oracle_owner(x)
        hops.append(h)
    report("routing vs global oracle", bad == 0, f"{bad} mismatches, mean hops {statistics.fmean(hops):.2f}")
    return ok


# -- entry point ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dhtrep", description="Chord replication simulator and reliability tables")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("simulate", help="run one scenario (all repeats)")
    sp.add_argument("config", nargs="?", help="key = value config file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out", default="-")

    sw = sub.add_parser("sweep", help="run an experiment sweep")
    sw.add_argument("spec", help="key = value sweep spec (axis, values, algorithms, output, config keys)")
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.add_argument("--out", default=None)

    an = sub.add_parser("analyze", help="analytical and Monte Carlo tables")
    an.add_argument("kind", choices=("fig1", "fig2", "fig4", "fig5", "probes", "collision"))
    an.add_argument("params", nargs="*", metavar="KEY=VALUE")
    an.add_argument("--out", default="-")

    sub.add_parser("selftest", help="run the oracle equivalence checks")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "simulate":
            values = read_kv(Path(args.config).read_text()) if args.config else {}
            values.update(parse_sets(args.set))
            cfg = config_from_mapping(values)
            spec = ExperimentSpec(cfg, "S", (cfg.S,), (cfg.algorithm,))
            rows, all_ok = run_experiment(spec, worker_count())
            meta = {"seeds": ",".join(str(cfg.seed + i) for i in range(cfg.repeats)), "config_hash": cfg.config_hash()}
            write_csv(args.out, meta, SWEEP_COLUMNS, rows)
            return EXIT_OK if all_ok else EXIT_PARTIAL
        if args.verb == "sweep":
            values = read_kv(Path(args.spec).read_text())
            values.update(parse_sets(args.set))
            spec = parse_spec(values)
            rows, all_ok = run_experiment(spec, worker_count())
            base = spec.base
            meta = {
                "seeds": ",".join(str(base.seed + i) for i in range(base.repeats)),
                "config_hash": base.config_hash(),
                "axis": spec.axis,
            }
            write_csv(args.out or spec.output, meta, SWEEP_COLUMNS, rows)
            return EXIT_OK if all_ok else EXIT_PARTIAL
        if args.verb == "analyze":
            meta, header, rows = analysis_table(args.kind, parse_sets(args.params))
            meta = {"kind": args.kind, "seeds": "none", **{k: str(v) for k, v in meta.items()}}
            text = ";".join(f"{k}={v}" for k, v in sorted(meta.items()))
            meta["config_hash"] = hashlib.sha256(text.encode()).hexdigest()[:16]
            write_csv(args.out, meta, header, rows)
            return EXIT_OK
        return EXIT_OK if selftest() else 1
    except (ConfigError, OSError) as exc:
        print(f"dhtrep: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
