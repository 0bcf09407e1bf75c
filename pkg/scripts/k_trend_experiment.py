#!/usr/bin/env python3
"""Iteration-count trends over grid size and processor count.

Runs strip-partitioned grid solves with matched impedances, measures the
iteration K at which the oracle RMS error crosses the threshold, and writes
one CSV per sweep together with the cost-model predictions.

    python scripts/k_trend_experiment.py --out out/ktrends
"""

import argparse
import math
import os
import sys
import time

from vtm.analysis import direct_solve
from vtm.core_graph import format_float
from vtm.local_solver import match_impedances
from vtm.partitioner import split
from vtm.perf_model import MachineModel, measure_K, parallel_time, sequential_time
from vtm.runtime import RunConfig, run_vtm
from vtm.testbench import GridSpec, grid_partition, grid_system


def run_cell(n: int, p: int, eps_rms: float, max_iter: int) -> dict:
    side = int(math.isqrt(n))
    if side * side != n:
        raise SystemExit(f"n={n} is not a perfect square")
    spec = GridSpec(side=side, strips=p)
    graph = grid_system(spec)
    _, scheme = grid_partition(spec)
    s = split(graph, scheme)
    impedances = match_impedances(s)
    oracle = direct_solve(s.source)
    start = time.perf_counter()
    report = run_vtm(s, impedances, RunConfig(epsilon=1e-13, max_iter=max_iter),
                     oracle=oracle)
    elapsed = time.perf_counter() - start
    k = measure_K(report, eps_rms)
    return dict(n=n, p=p, K=k, iters=report.iterations, converged=report.converged,
                seconds=elapsed)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p-list", default="2,4,8,16", help="strip counts for the p sweep")
    ap.add_argument("--n-fixed", type=int, default=4225, help="grid size for the p sweep")
    ap.add_argument("--n-list", default="289,1089,2401", help="grid sizes for the n sweep")
    ap.add_argument("--p-fixed", type=int, default=4, help="strip count for the n sweep")
    ap.add_argument("--eps", type=float, default=1e-10, help="RMS threshold defining K")
    ap.add_argument("--max-iter", type=int, default=5000)
    ap.add_argument("--alpha", type=float, default=0.0)
    ap.add_argument("--beta", type=float, default=0.0)
    ap.add_argument("--out", default="out/ktrends")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    model = MachineModel(alpha=args.alpha, beta=args.beta)
    header = "n,p,epsilon,K,T_p_pred,T_s_pred,speedup_pred\n"

    def emit(path, cells):
        with open(path, "w") as fh:
            fh.write(header)
            for c in cells:
                if c["K"] is None:
                    fh.write(f"{c['n']},{c['p']},{format_float(args.eps)},,,,\n")
                    continue
                tp = parallel_time(c["n"], c["p"], c["K"], model)
                ts = sequential_time(c["n"])
                fh.write(f"{c['n']},{c['p']},{format_float(args.eps)},{c['K']},"
                         f"{format_float(tp)},{format_float(ts)},{format_float(ts/tp)}\n")
        print(f"wrote {path}")

    p_cells = []
    for p in (int(t) for t in args.p_list.split(",") if t):
        cell = run_cell(args.n_fixed, p, args.eps, args.max_iter)
        print(f"n={cell['n']} p={cell['p']}: K={cell['K']} "
              f"({cell['iters']} iterations, {cell['seconds']:.2f}s)")
        p_cells.append(cell)
    emit(os.path.join(args.out, "k_vs_p.csv"), p_cells)

    n_cells = []
    for n in (int(t) for t in args.n_list.split(",") if t):
        cell = run_cell(n, args.p_fixed, args.eps, args.max_iter)
        print(f"n={cell['n']} p={cell['p']}: K={cell['K']} "
              f"({cell['iters']} iterations, {cell['seconds']:.2f}s)")
        n_cells.append(cell)
    emit(os.path.join(args.out, "k_vs_n.csv"), n_cells)
    return 0


if __name__ == "__main__":
    sys.exit(main())
