"""Command-line entry point: simulate, optimize, eval and bench."""

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .graph import PARAMETERIZATIONS, NoProgress, SolverConfig, SolverError, optimize
from .io import GraphFormatError, fmt, read_graph, write_graph
from .metrics import METRIC_FIELDS, aggregate, evaluate
from .sim import WorldConfig, preset, simulate

# rows of the trajectory/quadric error table: (observation noise, init noise)
DEFAULT_GRID = ("L-L", "M-L", "H-L", "L-L", "L-M", "L-H")
# seeds of grid row r start at r * SEED_STRIDE, so repeated rows are independent
SEED_STRIDE = 1000
TRACE_FIELDS = ("iteration", "cost", "lambda", "accepted")
RUN_FIELDS = ("preset_obs", "preset_init", "param", "seed") + METRIC_FIELDS
BENCH_RUN_FIELDS = ("row",) + RUN_FIELDS + ("iterations", "iterations_to_1pct", "converged")
AGG_FIELDS = ("row", "preset_obs", "preset_init", "param", "runs") + METRIC_FIELDS + (
    "iterations_to_1pct",)


class CliError(Exception):
    pass


def ground_truth_path(out):
    root, ext = os.path.splitext(out)
    return f"{root}.gt{ext or '.graph'}"


def _cell(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return fmt(x)
    return str(x)


def write_csv(path, fields, rows):
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r[k]) for k in fields])


def write_trace(path, report):
    write_csv(path, TRACE_FIELDS, [dict(zip(TRACE_FIELDS, row)) for row in report.cost_trace])


def world_config(seed, landmarks=15, frames=50, k=10):
    return WorldConfig(seed=seed, num_landmarks=landmarks, num_frames=frames, k_nearest=k)


def solve(graph, param, max_iters=100):
    """Optimize, turning a stalled solve into a non-converged result."""
    try:
        est, report = optimize(graph, param, SolverConfig(max_iters=max_iters))
    except NoProgress as err:
        est, report = err.graph, err.report
        report.converged = False
    est.meta = dict(graph.meta, param=param, converged=_cell(report.converged),
                    iterations=str(report.iterations))
    return est, report


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args):
    config = world_config(args.seed, args.landmarks, args.frames, args.k)
    try:
        config.validate()
        noisy, truth = simulate(config, preset(args.preset_init), preset(args.preset_obs))
    except ValueError as err:
        raise CliError(str(err)) from None
    write_graph(args.out, noisy)
    write_graph(args.ground_truth or ground_truth_path(args.out), truth)
    return 0


def cmd_optimize(args):
    graph = read_graph(args.graph)
    est, report = solve(graph, args.param, args.max_iters)
    write_graph(args.out, est)
    if args.trace_out:
        write_trace(args.trace_out, report)
    print(f"param={args.param} iterations={report.iterations} "
          f"cost={fmt(report.final_cost)} converged={_cell(report.converged)}")
    return 0


def cmd_eval(args):
    est = read_graph(args.estimate)
    truth = read_graph(args.ground_truth)
    if len(est.poses) != len(truth.poses) or len(est.landmarks) != len(truth.landmarks):
        raise CliError("estimate and ground truth have different variable counts")
    meta = dict(truth.meta, **est.meta)
    r = evaluate(est, truth, meta.get("preset_obs", ""), meta.get("preset_init", ""),
                 meta.get("param", ""), int(meta.get("seed", 0)))
    rows = [{k: getattr(r, k) for k in RUN_FIELDS}]
    if args.out:
        write_csv(args.out, RUN_FIELDS, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(RUN_FIELDS)
        w.writerow([_cell(rows[0][k]) for k in RUN_FIELDS])
    return 0


def parse_grid(text):
    rows = []
    for item in text.split(","):
        parts = item.strip().upper().split("-")
        if len(parts) != 2:
            raise CliError(f"preset pair {item!r} is not of the form OBS-INIT")
        for p in parts:
            try:
                preset(p)
            except ValueError as err:
                raise CliError(str(err)) from None
        rows.append(tuple(parts))
    return rows


def bench_run(task):
    """One (row, seed) world solved under every parameterization."""
    row, obs, init, seed, params, max_iters = task
    noisy, truth = simulate(world_config(seed), init, obs)
    out = []
    for param in params:
        est, report = solve(noisy, param, max_iters)
        r = evaluate(est, truth, obs, init, param, seed, report)
        out.append((row, r, report))
    return out


def cmd_bench(args):
    grid = parse_grid(args.presets)
    params = [p.strip().upper() for p in args.params.split(",")]
    for p in params:
        if p not in PARAMETERIZATIONS:
            raise CliError(f"unknown parameterization {p!r}")
    tasks = [(row, obs, init, row * SEED_STRIDE + s, params, args.max_iters)
             for row, (obs, init) in enumerate(grid) for s in range(args.seeds)]
    os.makedirs(os.path.join(args.out_dir, "traces"), exist_ok=True)
    start = time.perf_counter()
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(bench_run, tasks))
    else:
        results = [bench_run(t) for t in tasks]
    runs, agg_rows = [], []
    by_row = {}
    for batch in results:
        for row, r, report in batch:
            name = f"row{row}_{r.preset_obs}-{r.preset_init}_{r.param}_seed{r.seed}.csv"
            write_trace(os.path.join(args.out_dir, "traces", name), report)
            d = {k: getattr(r, k) for k in RUN_FIELDS}
            d.update(row=row, iterations=report.iterations,
                     iterations_to_1pct=r.iterations_to_1pct, converged=r.converged)
            runs.append(d)
            by_row.setdefault(row, []).append(r)
    for row in sorted(by_row):
        for a in aggregate(by_row[row]):
            agg_rows.append(dict(a, row=row))
    write_csv(os.path.join(args.out_dir, "runs.csv"), BENCH_RUN_FIELDS, runs)
    write_csv(os.path.join(args.out_dir, "aggregate.csv"), AGG_FIELDS, agg_rows)
    failed = sum(not d["converged"] for d in runs)
    print(f"{len(runs)} runs in {time.perf_counter() - start:.1f} s; "
          f"{failed} did not converge (see runs.csv)", file=sys.stderr)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="quadslam", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a noisy graph and its ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset-init", default="L")
    p.add_argument("--preset-obs", default="L")
    p.add_argument("--landmarks", type=int, default=15)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--ground-truth", help="ground-truth path (default: <out>.gt.<ext>)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="run Levenberg-Marquardt on a graph file")
    p.add_argument("--graph", required=True)
    p.add_argument("--param", choices=PARAMETERIZATIONS, default="D")
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="trajectory and quadric errors of an estimate")
    p.add_argument("--estimate", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="full noise-configuration grid")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--presets", default=",".join(DEFAULT_GRID),
                   help="comma-separated OBS-INIT preset pairs")
    p.add_argument("--params", default=",".join(PARAMETERIZATIONS))
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, GraphFormatError, SolverError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
