from __future__ import annotations

import csv
import io
import subprocess
import sys

import pytest

from dhtrep import __version__, cli
from dhtrep.sim import ConfigError, ScenarioConfig


def run_cli(*argv) -> int:
    return cli.main(list(argv))


def read_rows(path):
    text = path.read_text()
    assert "\r" not in text
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1], rows[2:]


# -- parsing ----------------------------------------------------------------------------------


def test_read_kv():
    text = "# comment\nnodes = 50\n\nS=4  # inline\n"
    assert cli.read_kv(text) == {"nodes": "50", "S": "4"}
    with pytest.raises(ConfigError):
        cli.read_kv("nodes 50")


def test_parse_sets():
    assert cli.parse_sets(["a=1", "b = x=y"]) == {"a": "1", "b": "x=y"}
    with pytest.raises(ConfigError):
        cli.parse_sets(["novalue"])


@pytest.mark.parametrize(
    "values",
    [
        {"axis": "S", "values": ""},
        {"axis": "S", "values": "4,2"},
        {"axis": "S", "values": "2,2"},
        {"axis": "speed", "values": "1,2"},
        {"axis": "S", "values": "1,2", "algorithms": "dhash,pastry"},
        {"values": "1,2"},
        {"axis": "S", "values": "1,x"},
    ],
)
def test_bad_sweep_specs_rejected(values):
    with pytest.raises(ConfigError):
        cli.parse_spec(values)


def test_sweep_cells():
    spec = cli.parse_spec({"axis": "r", "values": "4,6", "algorithms": "dhash,dyn-block"})
    cells = spec.cells()
    assert [(a, v) for a, v, _ in cells] == [("dhash", 4.0), ("dhash", 6.0), ("dyn-block", 4.0), ("dyn-block", 6.0)]
    cfg = cells[1][2]
    assert cfg.r == 6 and cfg.r_min == 7
    cat = cli.parse_spec({"axis": "catastrophe-fraction", "values": "0.1", "algorithms": "dhash"}).cells()[0][2]
    assert cat.churn == "catastrophe" and cat.catastrophe_fraction == 0.1
    n = cli.parse_spec({"axis": "N", "values": "50", "algorithms": "dhash"}).cells()[0][2]
    assert n.nodes == 50 and isinstance(n.nodes, int)


# -- analyze ----------------------------------------------------------------------------------


def test_analyze_probes(tmp_path):
    out = tmp_path / "probes.csv"
    assert run_cli("analyze", "probes", "--out", str(out)) == 0
    meta, header, rows = read_rows(out)
    assert meta[0] == f"# dhtrep {__version__}"
    assert any(m.startswith("config_hash=") for m in meta)
    assert any(m.startswith("seeds=") for m in meta)
    assert header == ["S", "expected_probes"]
    assert [float(r[1]) for r in rows] == pytest.approx([2, 4 / 3, 8 / 7, 16 / 15])


def test_analyze_fig1(tmp_path):
    out = tmp_path / "fig1.csv"
    assert run_cli("analyze", "fig1", "--out", str(out)) == 0
    _, _, rows = read_rows(out)
    assert len(rows) == 17
    s = [int(r[1]) for r in rows]
    assert all(a >= b for a, b in zip(s, s[1:]))


def test_analyze_fig4_small(tmp_path):
    out = tmp_path / "fig4.csv"
    assert run_cli("analyze", "fig4", "N=60", "failed=30", "r_max=4", "samples=40", "--out", str(out)) == 0
    meta, header, rows = read_rows(out)
    assert "ci=wilson-95" in meta
    assert header == ["r", "kind", "losses", "p_loss", "ci_low", "ci_high"]
    assert len(rows) == 4 * 5


def test_analyze_bad_params_is_config_error(tmp_path, capsys):
    assert run_cli("analyze", "fig1", "colour=red") == cli.EXIT_CONFIG
    assert run_cli("analyze", "fig1", "N=many") == cli.EXIT_CONFIG
    assert "dhtrep:" in capsys.readouterr().err


def test_analyze_unknown_kind_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run_cli("analyze", "fig99")
    assert exc.value.code == 2


# -- simulate and sweep -------------------------------------------------------------------------


CONFIG = "nodes = 30\nitems_per_node = 5\nfetch_count = 200\nS = 2\n"


def test_simulate_writes_one_row(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text(CONFIG)
    out = tmp_path / "run.csv"
    assert run_cli("simulate", str(cfgfile), "--set", "algorithm=dyn-block", "--out", str(out)) == 0
    meta, header, rows = read_rows(out)
    assert header == list(cli.SWEEP_COLUMNS)
    assert len(rows) == 1 and rows[0][0] == "dyn-block" and rows[0][3] == "ok"
    assert "seeds=1" in meta


def test_simulate_bad_config_exit_code(tmp_path):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("nodes = 1\n")
    assert run_cli("simulate", str(cfgfile)) == cli.EXIT_CONFIG
    assert run_cli("simulate", str(tmp_path / "missing.cfg")) == cli.EXIT_CONFIG


def test_sweep_csv_is_byte_identical(tmp_path):
    spec = tmp_path / "sweep.spec"
    spec.write_text(CONFIG + "axis = S\nvalues = 1, 2\nalgorithms = dhash, dyn-successor\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run_cli("sweep", str(spec), "--out", str(a)) == 0
    assert run_cli("sweep", str(spec), "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()
    _, _, rows = read_rows(a)
    assert [(r[0], r[2]) for r in rows] == [
        ("dhash", "1.0"), ("dhash", "2.0"), ("dyn-successor", "1.0"), ("dyn-successor", "2.0")
    ]


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    spec = tmp_path / "sweep.spec"
    spec.write_text(CONFIG + "axis = items-per-node\nvalues = 2, 4\nalgorithms = dhash\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run_cli("sweep", str(spec), "--out", str(a)) == 0
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert run_cli("sweep", str(spec), "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_partial_failure_exit_code(tmp_path, monkeypatch):
    spec = tmp_path / "sweep.spec"
    spec.write_text(CONFIG + "axis = S\nvalues = 1, 2\nalgorithms = dhash\n")
    real = cli._run_cell

    def flaky(cfg: ScenarioConfig):
        if cfg.S == 2:
            raise RuntimeError("cell exploded")
        return real(cfg)

    monkeypatch.setattr(cli, "_run_cell", flaky)
    out = tmp_path / "p.csv"
    assert run_cli("sweep", str(spec), "--out", str(out)) == cli.EXIT_PARTIAL
    _, _, rows = read_rows(out)
    assert rows[0][3] == "ok" and rows[1][3] == "error:RuntimeError"


def test_bad_worker_env(tmp_path, monkeypatch):
    spec = tmp_path / "sweep.spec"
    spec.write_text(CONFIG + "axis = S\nvalues = 1\nalgorithms = dhash\n")
    monkeypatch.setenv(cli.WORKERS_ENV, "lots")
    assert run_cli("sweep", str(spec)) == cli.EXIT_CONFIG


# -- selftest and entry point ---------------------------------------------------------------------


def test_selftest_passes():
    buf = io.StringIO()
    assert cli.selftest(buf)
    lines = buf.getvalue().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_console_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "dhtrep.cli", "analyze", "probes", "S=1,4"], capture_output=True, text=True
    )
    assert res.returncode == 0
    assert res.stdout.splitlines()[-1].startswith("4.0,")
