import csv
import subprocess
import sys

import pytest

from quadric_slam.cli import ground_truth_path, main
from quadric_slam.io import read_graph
from quadric_slam.metrics import aggregate, evaluate


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "ll.graph"
    assert run("simulate", "--seed", 1, "--preset-init", "L", "--preset-obs", "L",
               "--out", out) == 0
    return out


def test_simulate_deterministic(tmp_path, simulated):
    again = tmp_path / "again.graph"
    run("simulate", "--seed", 1, "--preset-init", "L", "--preset-obs", "L", "--out", again)
    assert again.read_bytes() == simulated.read_bytes()
    assert (tmp_path / "again.gt.graph").read_bytes() == (tmp_path / "ll.gt.graph").read_bytes()


def test_simulate_observation_count(simulated):
    lines = simulated.read_text().splitlines()
    assert sum(line.startswith("OBS ") for line in lines) == 500
    assert ground_truth_path(str(simulated)).endswith("ll.gt.graph")


def test_simulate_rejects_large_k(tmp_path, capsys):
    code = run("simulate", "--k", 20, "--landmarks", 15, "--out", tmp_path / "x.graph")
    assert code != 0
    assert "exceeds" in capsys.readouterr().err
    assert not (tmp_path / "x.graph").exists()


def test_optimize_ground_truth(tmp_path, simulated):
    gt = tmp_path / "ll.gt.graph"
    out, trace = tmp_path / "opt.graph", tmp_path / "trace.csv"
    assert run("optimize", "--graph", gt, "--param", "D", "--out", out,
               "--trace-out", trace) == 0
    rows = read_csv(trace)
    assert list(rows[0]) == ["iteration", "cost", "lambda", "accepted"]
    assert float(rows[-1]["cost"]) < 1e-12
    assert int(rows[-1]["iteration"]) <= 2
    assert read_graph(out).meta["converged"] == "true"


@pytest.mark.parametrize("param", ["D", "F", "RF"])
def test_optimize_noisy_records_meta(tmp_path, simulated, param):
    out = tmp_path / f"{param}.graph"
    assert run("optimize", "--graph", simulated, "--param", param, "--out", out,
               "--trace-out", tmp_path / f"{param}.csv") == 0
    meta = read_graph(out).meta
    assert meta["param"] == param and meta["converged"] in ("true", "false")
    assert read_csv(tmp_path / f"{param}.csv")


def test_decomposed_low_noise_converges(tmp_path, simulated):
    # seed 1 of the low-noise world converges well inside the default budget
    out = tmp_path / "d.graph"
    run("optimize", "--graph", simulated, "--param", "D", "--out", out)
    assert read_graph(out).meta["converged"] == "true"


def test_eval_zero_row(tmp_path, simulated, capsys):
    gt = tmp_path / "ll.gt.graph"
    out = tmp_path / "m.csv"
    assert run("eval", "--estimate", gt, "--ground-truth", gt, "--out", out) == 0
    row, = read_csv(out)
    assert list(row) == ["preset_obs", "preset_init", "param", "seed", "ate_rot", "ate_trans",
                         "quadric_err"]
    assert float(row["ate_rot"]) == float(row["ate_trans"]) == float(row["quadric_err"]) == 0.0
    assert run("eval", "--estimate", gt, "--ground-truth", gt) == 0
    assert capsys.readouterr().out.startswith("preset_obs,")


def test_eval_matches_library(tmp_path, simulated):
    out = tmp_path / "m.csv"
    run("eval", "--estimate", simulated, "--ground-truth", tmp_path / "ll.gt.graph",
        "--out", out)
    row, = read_csv(out)
    ref = evaluate(read_graph(simulated), read_graph(tmp_path / "ll.gt.graph"))
    assert float(row["ate_trans"]) == ref.ate_trans
    assert (row["preset_obs"], row["preset_init"], row["seed"]) == ("L", "L", "1")


def test_missing_file_exit_code(tmp_path, capsys):
    assert run("optimize", "--graph", tmp_path / "nope", "--out", tmp_path / "o") == 2
    assert "error" in capsys.readouterr().err


def test_malformed_graph_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.graph"
    bad.write_text("POSE 0 1 2\n")
    assert run("optimize", "--graph", bad, "--out", tmp_path / "o") == 2
    assert "line 1" in capsys.readouterr().err


def test_bench_smoke_and_determinism(tmp_path):
    args = ["bench", "--seeds", 1, "--presets", "L-L,H-L", "--max-iters", 30]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--jobs", 2, "--out-dir", tmp_path / "b") == 0
    for name in ("runs.csv", "aggregate.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    runs = read_csv(tmp_path / "a" / "runs.csv")
    assert len(runs) == 6
    agg = read_csv(tmp_path / "a" / "aggregate.csv")
    assert [(r["row"], r["preset_obs"], r["param"]) for r in agg] == [
        ("0", "L", "D"), ("0", "L", "F"), ("0", "L", "RF"),
        ("1", "H", "D"), ("1", "H", "F"), ("1", "H", "RF")]
    traces = sorted(p.name for p in (tmp_path / "a" / "traces").iterdir())
    assert len(traces) == 6 and traces[0] == "row0_L-L_D_seed0.csv"
    for p in (tmp_path / "a" / "traces").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / "traces" / p.name).read_bytes()


def test_bench_rejects_bad_grid(tmp_path):
    assert run("bench", "--presets", "L", "--out-dir", tmp_path) == 2
    assert run("bench", "--presets", "L-Q", "--out-dir", tmp_path) == 2
    assert run("bench", "--params", "X", "--out-dir", tmp_path) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "quadric_slam", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "optimize", "eval", "bench"):
        assert cmd in res.stdout
