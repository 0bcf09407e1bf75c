#!/usr/bin/env python3
"""Impedance-matching sensitivity study.

Scales the matched line impedances by a range of factors and records the
20-iteration RMS error on the six-vertex demo system, then compares matched
against constant impedances on a strip-partitioned grid.  The error curve
bottoms out near scale 1.0 (the matched point).

    python scripts/matching_experiment.py --out out/matching
"""

import argparse
import os
import sys

from vtm.analysis import direct_solve
from vtm.core_graph import format_float
from vtm.demo import get_demo
from vtm.local_solver import ImpedanceAssignment, match_impedances
from vtm.partitioner import split
from vtm.runtime import RunConfig, run_vtm
from vtm.testbench import GridSpec, grid_partition, grid_system

SCALES = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iterations", type=int, default=20)
    ap.add_argument("--grid", type=int, default=33, help="grid side for the second study")
    ap.add_argument("--strips", type=int, default=8)
    ap.add_argument("--out", default="out/matching")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    case = get_demo("example51")
    s = case.split_system()
    x_star = direct_solve(s.source)
    matched = match_impedances(s, policy="mean")
    cfg = RunConfig(epsilon=1e-300, max_iter=args.iterations)
    path = os.path.join(args.out, "demo_scale_sweep.csv")
    with open(path, "w") as fh:
        fh.write("scale,rms_after_%d\n" % args.iterations)
        for scale in SCALES:
            scaled = ImpedanceAssignment(
                by_vtl={k: scale * v for k, v in matched.by_vtl.items()})
            rms = run_vtm(s, scaled, cfg, oracle=x_star).records[-1].rms_error
            fh.write(f"{format_float(scale)},{format_float(rms)}\n")
            print(f"scale {scale:>6}: rms after {args.iterations} iterations = {rms:.3e}")
    print(f"wrote {path}")

    spec = GridSpec(side=args.grid, strips=args.strips)
    graph = grid_system(spec)
    _, scheme = grid_partition(spec)
    sg = split(graph, scheme)
    cfg2 = RunConfig(epsilon=1e-11, max_iter=5000)
    it_matched = run_vtm(sg, match_impedances(sg), cfg2).iterations
    it_const = run_vtm(sg, ImpedanceAssignment.constant(sg, 1.0), cfg2).iterations
    path2 = os.path.join(args.out, "grid_matched_vs_constant.csv")
    with open(path2, "w") as fh:
        fh.write("impedance,iterations\n")
        fh.write(f"matched_mean,{it_matched}\n")
        fh.write(f"constant_1.0,{it_const}\n")
    print(f"grid {args.grid}x{args.grid}, {args.strips} strips: "
          f"matched {it_matched} vs constant {it_const} iterations")
    print(f"wrote {path2}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
