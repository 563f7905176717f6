import csv
import io
import json
from fractions import Fraction

import pytest

from hermes.cli import REFERENCE, comparison_rows, main
from hermes.config import parse_config
from hermes.metrics import SimReport, parse_csv_report
from hermes.workload import GemmSpec, gen_gemm, merge_streams, write_trace


@pytest.fixture
def small_trace(tmp_path):
    path = tmp_path / "tiny.trace"
    write_trace(merge_streams([gen_gemm(GemmSpec(32, 32, 32, 16, 16, 16).at(c << 20), core=c) for c in range(4)]),
                path)
    return path


def test_reference_constants():
    assert REFERENCE["avg_latency_ns"] == tuple(map(Fraction, (120, 95, 85, 80)))
    assert REFERENCE["bandwidth_gbs"] == tuple(map(Fraction, (25, 35, 40, 42)))
    assert REFERENCE["hit_rate_pct"] == tuple(map(Fraction, (60, 75, 80, 90)))
    assert REFERENCE["energy_uj_per_op"] == tuple(map(Fraction, (50, 40, 38, 35)))


def test_run_bundled_default_json(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "--config", "hermes-default", "--workload", "gemm-small", "--out", str(out)]) == 0
    rep = SimReport.from_dict(json.loads(out.read_text()))
    assert rep.requests > 0 and rep.workload == "gemm-small"


def test_formats_agree(tmp_path, small_trace):
    paths = {}
    for fmt in ("json", "csv", "text"):
        paths[fmt] = tmp_path / f"r.{fmt}"
        assert main(["run", "--config", "shared-l3", "--trace", str(small_trace), "--format", fmt,
                     "--out", str(paths[fmt])]) == 0
    data = json.loads(paths["json"].read_text())
    flat = parse_csv_report(paths["csv"].read_text())
    assert set(SimReport.from_dict(data).to_dict()) == set(data)
    assert float(flat["avg_latency_ns"]) == data["avg_latency_ns"]
    assert int(flat["counters.l1_hits"]) == data["counters"]["l1_hits"]
    assert f"requests = {data['requests']}" in paths["text"].read_text()


def test_run_to_stdout(capsys, small_trace):
    assert main(["run", "--config", "baseline", "--trace", str(small_trace)]) == 0
    assert json.loads(capsys.readouterr().out)["config"] == "baseline"


def test_missing_trace_is_io_error(capsys, tmp_path):
    assert main(["run", "--trace", str(tmp_path / "nope.trace")]) == 2
    assert "nope.trace" in capsys.readouterr().err


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "x.cfg"), "--workload", "gemm-small"]) == 2


def test_invalid_config_names_invariant(capsys, tmp_path, small_trace):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("l3.size_bytes = 512K\n")
    assert main(["run", "--config", str(cfg), "--trace", str(small_trace)]) == 1
    assert "invariant violated" in capsys.readouterr().err


def test_bad_trace_is_validation_error(capsys, tmp_path):
    path = tmp_path / "bad.trace"
    path.write_text("0 0 Q 0x0 4\n")
    assert main(["run", "--trace", str(path)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_unwritable_output(tmp_path, small_trace):
    assert main(["run", "--trace", str(small_trace), "--out", str(tmp_path / "no" / "dir" / "r.json")]) == 2


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["run", "--workload", "gemm-small", "--format", "xml"])
    assert exc.value.code == 1


def test_sweep_outputs_and_determinism(tmp_path, small_trace):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["sweep", "--trace", str(small_trace), "--out", str(out), "--quiet"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["baseline.json", "comparison.csv", "prefetch.json", "shared-l3.json", "tensor-aware.json"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = list(csv.DictReader(io.StringIO((a / "comparison.csv").read_text())))
    assert len(rows) == 16
    base = [r for r in rows if r["config"] == "baseline" and r["metric"] == "avg_latency_ns"][0]
    assert base["reference"] == "120"
    assert all(r["direction_ok"] in ("true", "false") for r in rows)
    assert not any(p.name.startswith(".") for p in a.iterdir())


def test_comparison_direction_logic():
    def rep(name, lat, bw, mem, energy):
        return SimReport(name, "w", 100, lat, bw, bw, {}, energy, None, 1, 0, mem, {}, {})
    reports = [rep("baseline", 100, 1, 50, 9), rep("shared-l3", 90, 2, 40, 8),
               rep("prefetch", 95, 3, 30, 8), rep("tensor-aware", 80, 4, 20, 7)]
    ok = {(r.config, r.metric): r.direction_ok for r in comparison_rows(reports)}
    assert ok[("prefetch", "avg_latency_ns")] is False
    assert ok[("prefetch", "energy_uj_per_op")] is False  # equal is not strictly better
    assert ok[("tensor-aware", "avg_latency_ns")] is True
    assert ok[("tensor-aware", "hit_rate_pct")] is True
    assert all(r.reference is not None for r in comparison_rows(reports))


def test_gen_trace_minimal_gemm(capsys):
    assert main(["gen-trace", "--kind", "gemm", "--spec", "m=1", "n=1", "k=1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert len(body) == 4
    assert lines[0].startswith("#")


def test_gen_trace_is_deterministic(tmp_path):
    a, b = tmp_path / "a.trace", tmp_path / "b.trace"
    for out in (a, b):
        assert main(["gen-trace", "--kind", "attention", "--spec", "seq_len=4", "head_dim=8", "--cores", "2",
                     "--seed", "3", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["run", "--trace", str(a), "--config", "baseline", "--out", str(tmp_path / "r.json")]) == 0


@pytest.mark.parametrize("argv", [
    ["gen-trace", "--kind", "conv"],
    ["gen-trace", "--kind", "rnn", "--spec", "hidden=4", "depth=2"],
    ["gen-trace", "--kind", "rnn", "--spec", "hidden=x", "timesteps=2"],
    ["gen-trace", "--kind", "rnn", "--spec", "hidden=4"],
    ["gen-trace", "--kind", "gemm", "--spec", "m=4", "n=4", "k=4", "tile_m=8"],
])
def test_gen_trace_bad_input(argv, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err
    if "depth" in " ".join(argv):
        assert "hidden, timesteps" in err


def test_config_command(capsys):
    assert main(["config", "--list"]) == 0
    assert "tensor-aware" in capsys.readouterr().out.split()
    assert main(["config", "prefetch"]) == 0
    assert parse_config(capsys.readouterr().out).name == "prefetch"


def test_seed_environment_override(monkeypatch, capsys):
    monkeypatch.setenv("HERMES_SEED", "42")
    assert main(["config", "baseline"]) == 0
    assert parse_config(capsys.readouterr().out).seed == 42
    monkeypatch.setenv("HERMES_SEED", "banana")
    assert main(["config", "baseline"]) == 1
