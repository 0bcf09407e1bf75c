"""Command-line front end: load/generate, partition, match, certify, run, report.

Commands: solve, bench, certify, partition, match, gen-grid.  Options can
also come from a sectioned key-value config file (command-line flags win).
Artifacts are deterministic: identical manifests produce byte-identical CSV
bodies, with timestamps confined to comment lines.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from vtm import analysis, demo, local_solver, partitioner, perf_model, runtime, testbench
from vtm.core_graph import (ElectricGraph, format_float, read_system, system_to_graph,
                            write_system, write_vector)
from vtm.errors import VtmError

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2


@dataclass
class Manifest:
    """Resolved run description: one source per category."""

    demo_name: str | None = None
    grid: int | None = None
    sigma: float | None = None
    rhs_seed: int | None = None
    matrix: str | None = None
    rhs: str | None = None

    scheme: str | None = None
    strips: int | None = None
    blocks: tuple[int, int] | None = None

    z_file: str | None = None
    match: str | None = None
    z_const: float | None = None

    eps: float = 1e-12
    max_iter: int = 1000
    mode: str = "sequential"
    out: str = "out"
    trace: bool = True
    message_log: bool = False

    def validate(self, need_impedance: bool = True) -> None:
        inputs = [self.demo_name is not None, self.grid is not None,
                  self.matrix is not None or self.rhs is not None]
        if sum(inputs) != 1:
            raise VtmError("choose exactly one input source: --demo, --grid, or --matrix/--rhs")
        if (self.matrix is None) != (self.rhs is None):
            raise VtmError("--matrix and --rhs must be given together")
        partitions = [self.scheme is not None, self.strips is not None,
                      self.blocks is not None]
        if self.demo_name is None and sum(partitions) != 1:
            raise VtmError("choose exactly one partition source: --scheme, --strips or --blocks")
        if self.demo_name is not None and sum(partitions) > 0:
            raise VtmError("--demo bundles its own partition; drop --scheme/--strips/--blocks")
        impedances = [self.z_file is not None, self.match is not None,
                      self.z_const is not None]
        if sum(impedances) > 1:
            raise VtmError("choose at most one impedance source: --z-file, --match or --z-const")
        if need_impedance and self.demo_name is None and sum(impedances) == 0:
            raise VtmError("choose an impedance source: --z-file, --match or --z-const")
        if (self.strips is not None or self.blocks is not None) and self.grid is None \
                and self.demo_name is None:
            raise VtmError("--strips/--blocks partition generated grids; "
                           "file inputs need --scheme")


def _resolve_case(man: Manifest, need_impedance: bool = True
                  ) -> tuple[ElectricGraph, partitioner.SplitSystem,
                             "local_solver.ImpedanceAssignment | None"]:
    if man.demo_name is not None:
        case = demo.get_demo(man.demo_name)
        graph = system_to_graph(case.system)
        split_sys = partitioner.split(graph, case.scheme)
        impedances = case.impedances
    else:
        if man.grid is not None:
            spec = testbench.GridSpec(
                side=man.grid,
                sigma=testbench.DEFAULT_SIGMA if man.sigma is None else man.sigma,
                strips=man.strips, blocks=man.blocks, rhs_seed=man.rhs_seed)
            graph = testbench.grid_system(spec)
            if man.scheme is not None:
                scheme = partitioner.load_scheme(man.scheme)
            else:
                _, scheme = testbench.grid_partition(spec)
        else:
            assert man.matrix is not None and man.rhs is not None
            graph = system_to_graph(read_system(man.matrix, man.rhs))
            assert man.scheme is not None
            scheme = partitioner.load_scheme(man.scheme)
        split_sys = partitioner.split(graph, scheme)
        impedances = None
    if man.z_file is not None:
        impedances = local_solver.read_impedances(man.z_file)
    elif man.match is not None:
        impedances = local_solver.match_impedances(split_sys, policy=man.match)
    elif man.z_const is not None:
        impedances = local_solver.ImpedanceAssignment.constant(split_sys, man.z_const)
    if need_impedance and impedances is None:
        raise VtmError("no impedance source resolved")
    return graph, split_sys, impedances


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _certification_text(split_sys: partitioner.SplitSystem,
                        impedances: local_solver.ImpedanceAssignment) -> str:
    try:
        op = analysis.build_global_operator(split_sys, impedances)
        return analysis.certify_convergence(op).to_text()
    except VtmError as exc:
        return f"certified = skipped\nreason = {exc}\n"


def cmd_solve(man: Manifest) -> int:
    man.validate()
    _, split_sys, impedances = _resolve_case(man)
    os.makedirs(man.out, exist_ok=True)
    if not impedances.coupled:
        local_solver.write_impedances(impedances, os.path.join(man.out, "impedances.txt"))
    partitioner.save_scheme(split_sys.scheme, os.path.join(man.out, "scheme.txt"))
    with open(os.path.join(man.out, "certification.txt"), "w") as fh:
        fh.write(_certification_text(split_sys, impedances))
    oracle = analysis.direct_solve(split_sys.source)
    cfg = runtime.RunConfig(epsilon=man.eps, max_iter=man.max_iter)
    report = runtime.run_vtm(split_sys, impedances, cfg, mode=man.mode, oracle=oracle,
                             record_messages=man.message_log)
    write_vector(report.x, os.path.join(man.out, "solution.txt"))
    if man.trace:
        runtime.write_trace(report, os.path.join(man.out, "trace.csv"),
                            comment=f"generated {_timestamp()}")
    if man.message_log:
        runtime.write_message_log(report.messages, os.path.join(man.out, "messages.csv"))
    final = report.records[-1] if report.records else None
    rms = final.rms_error if final else None
    print(f"converged = {report.converged}")
    print(f"iterations = {report.iterations}")
    if rms is not None:
        print(f"final_rms = {format_float(rms)}")
    if final is not None:
        print(f"final_residual_inf = {format_float(final.residual_inf)}")
    print(f"artifacts = {man.out}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_certify(man: Manifest) -> int:
    man.validate()
    _, split_sys, impedances = _resolve_case(man)
    op = analysis.build_global_operator(split_sys, impedances)
    result = analysis.certify_convergence(op)
    text = result.to_text()
    if man.out:
        os.makedirs(man.out, exist_ok=True)
        with open(os.path.join(man.out, "certification.txt"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK if result.certified else EXIT_NOT_CONVERGED


def cmd_partition(man: Manifest, export: bool) -> int:
    man.validate(need_impedance=False)
    _, split_sys, _ = _resolve_case(man, need_impedance=False)
    os.makedirs(man.out, exist_ok=True)
    partitioner.save_scheme(split_sys.scheme, os.path.join(man.out, "scheme.txt"))
    report = partitioner.verify_conformal(split_sys)
    for sub_id, cls in report.classification:
        print(f"subdomain {sub_id}: {cls} ({split_sys.subdomains[sub_id].dim} vertices)")
    print(f"lines = {len(split_sys.vtls)}")
    if export:
        partitioner.export_split(split_sys, man.out)
    return EXIT_OK if report.conformal else EXIT_NOT_CONVERGED


def cmd_match(man: Manifest) -> int:
    if man.z_file is None and man.match is None and man.z_const is None:
        man.match = "mean"
    man.validate()
    _, _, impedances = _resolve_case(man)
    os.makedirs(man.out, exist_ok=True)
    path = os.path.join(man.out, "impedances.txt")
    local_solver.write_impedances(impedances, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gen_grid(man: Manifest) -> int:
    if man.grid is None:
        raise VtmError("gen-grid requires --grid M")
    spec = testbench.GridSpec(
        side=man.grid,
        sigma=testbench.DEFAULT_SIGMA if man.sigma is None else man.sigma,
        rhs_seed=man.rhs_seed)
    graph = testbench.grid_system(spec)
    os.makedirs(man.out, exist_ok=True)
    from vtm.core_graph import graph_to_system
    sys_ = graph_to_system(graph)
    write_system(sys_, os.path.join(man.out, "matrix.mtx"),
                 os.path.join(man.out, "rhs.txt"))
    print(f"wrote {man.out}/matrix.mtx and {man.out}/rhs.txt (n = {sys_.dim})")
    return EXIT_OK


def cmd_bench(man: Manifest, n_list: list[int], p_list: list[int],
              alpha: float, beta: float) -> int:
    os.makedirs(man.out, exist_ok=True)
    model = perf_model.MachineModel(alpha=alpha, beta=beta)
    rows = []
    k_by_n: dict[int, list[int | None]] = {}
    for n in n_list:
        m = int(math.isqrt(n))
        if m * m != n:
            print(f"# n={n}: not a square grid size, skipped", file=sys.stderr)
            continue
        for p in p_list:
            try:
                spec = testbench.GridSpec(
                    side=m,
                    sigma=testbench.DEFAULT_SIGMA if man.sigma is None else man.sigma,
                    strips=p, rhs_seed=man.rhs_seed)
                graph = testbench.grid_system(spec)
                _, scheme = testbench.grid_partition(spec)
                split_sys = partitioner.split(graph, scheme)
                if man.z_const is not None:
                    impedances = local_solver.ImpedanceAssignment.constant(
                        split_sys, man.z_const)
                else:
                    impedances = local_solver.match_impedances(
                        split_sys, policy=man.match or "mean")
                oracle = analysis.direct_solve(split_sys.source)
                cfg = runtime.RunConfig(epsilon=min(man.eps, 1e-13),
                                        max_iter=man.max_iter)
                report = runtime.run_vtm(split_sys, impedances, cfg,
                                         mode=man.mode, oracle=oracle)
                k = perf_model.measure_K(report, man.eps)
            except VtmError as exc:
                print(f"# n={n} p={p}: failed ({exc})", file=sys.stderr)
                rows.append((n, p, man.eps, None, None, None, None))
                k_by_n.setdefault(n, []).append(None)
                continue
            if k is None:
                rows.append((n, p, man.eps, None, None, None, None))
            else:
                tp = perf_model.parallel_time(n, p, k, model)
                ts = perf_model.sequential_time(n)
                rows.append((n, p, man.eps, k, tp, ts, ts / tp))
            k_by_n.setdefault(n, []).append(k)

    lines = ["n,p,epsilon,K,T_p_pred,T_s_pred,speedup_pred"]
    for n, p, eps, k, tp, ts, sp in rows:
        cells = [str(n), str(p), format_float(eps),
                 "" if k is None else str(k),
                 "" if tp is None else format_float(tp),
                 "" if ts is None else format_float(ts),
                 "" if sp is None else format_float(sp)]
        lines.append(",".join(cells))
    body = "\n".join(lines) + "\n"
    footnotes = []
    for n, ks in sorted(k_by_n.items()):
        if len(ks) >= 2 and all(k is not None for k in ks):
            trend = all(a <= b for a, b in zip(ks, ks[1:]))
            footnotes.append(f"# K(p) non-decreasing for n={n}: {str(trend).lower()}")
    path = os.path.join(man.out, "bench.csv")
    with open(path, "w") as fh:
        fh.write(f"# generated {_timestamp()}\n")
        fh.write(body)
        for note in footnotes:
            fh.write(note + "\n")
    sys.stdout.write(body)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _parse_blocks(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise VtmError(f"--blocks expects RxC, got {text!r}") from None


def _parse_int_list(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    return [int(t) for t in text.split(",")]


def _load_config(path: str) -> dict[str, str]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    with open(path) as fh:
        parser.read_string("[_top]\n" + fh.read())
    merged: dict[str, str] = {}
    for section in parser.sections():
        merged.update(parser.items(section))
    return merged


_CONFIG_KEYS = {
    "demo": ("demo_name", str),
    "grid": ("grid", int),
    "sigma": ("sigma", float),
    "rhs_seed": ("rhs_seed", int),
    "matrix": ("matrix", str),
    "rhs": ("rhs", str),
    "scheme": ("scheme", str),
    "strips": ("strips", int),
    "blocks": ("blocks", _parse_blocks),
    "z_file": ("z_file", str),
    "match": ("match", str),
    "z_const": ("z_const", float),
    "eps": ("eps", float),
    "max_iter": ("max_iter", int),
    "mode": ("mode", str),
    "out": ("out", str),
    "trace": ("trace", lambda s: s.lower() in ("1", "true", "yes")),
    "message_log": ("message_log", lambda s: s.lower() in ("1", "true", "yes")),
}


def _manifest_from_args(args: argparse.Namespace) -> Manifest:
    man = Manifest()
    if getattr(args, "config", None):
        for key, raw in _load_config(args.config).items():
            if key not in _CONFIG_KEYS:
                raise VtmError(f"unknown config key {key!r}")
            field_name, conv = _CONFIG_KEYS[key]
            setattr(man, field_name, conv(raw))
    overrides = {
        "demo": "demo_name", "grid": "grid", "sigma": "sigma", "rhs_seed": "rhs_seed",
        "matrix": "matrix", "rhs": "rhs", "scheme": "scheme", "strips": "strips",
        "blocks": "blocks", "z_file": "z_file", "match": "match", "z_const": "z_const",
        "eps": "eps", "max_iter": "max_iter", "mode": "mode", "out": "out",
    }
    for arg_name, field_name in overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(man, field_name, value)
    if getattr(args, "trace", False):
        man.trace = True
    if getattr(args, "message_log", False):
        man.message_log = True
    return man


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="sectioned key-value config file (flags win)")
    parser.add_argument("--demo", help="built-in case, e.g. example51")
    parser.add_argument("--grid", type=int, metavar="M", help="generate an MxM grid system")
    parser.add_argument("--sigma", type=float, help="grid diagonal shift (default 0.01)")
    parser.add_argument("--rhs-seed", dest="rhs_seed", type=int,
                        help="random grid sources with this seed (default all-ones)")
    parser.add_argument("--matrix", help="Matrix Market coordinate symmetric file")
    parser.add_argument("--rhs", help="one-value-per-line source vector file")
    parser.add_argument("--scheme", help="partition scheme file")
    parser.add_argument("--strips", type=int, metavar="P", help="strip partition count")
    parser.add_argument("--blocks", type=_parse_blocks, metavar="RxC",
                        help="block partition layout")
    parser.add_argument("--z-file", dest="z_file", help="impedance file (line id = z)")
    parser.add_argument("--match", choices=local_solver.MATCH_POLICIES,
                        help="impedance matching policy")
    parser.add_argument("--z-const", dest="z_const", type=float,
                        help="constant impedance for every line")
    parser.add_argument("--eps", type=float, help="convergence threshold (default 1e-12)")
    parser.add_argument("--max-iter", dest="max_iter", type=int,
                        help="iteration cap (default 1000)")
    parser.add_argument("--mode", choices=("sequential", "thread"),
                        help="worker scheduling (results are identical)")
    parser.add_argument("--out", help="artifact directory (default ./out)")
    parser.add_argument("--trace", action="store_true", help="write trace.csv")
    parser.add_argument("--message-log", dest="message_log", action="store_true",
                        help="record and dump every boundary message")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtm",
        description="Partitioned transmission-line solver for sparse SPD systems")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
            ("solve", "partition, precondition, iterate and report"),
            ("certify", "build the boundary iteration matrix and check contraction"),
            ("partition", "build and store a partition scheme"),
            ("match", "compute impedances by matching and store them"),
            ("gen-grid", "generate a grid testbench system"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "partition":
            p.add_argument("--export", action="store_true",
                           help="also dump every subdomain matrix and port table")

    p = sub.add_parser("bench", help="K(n,p) sweep with cost-model predictions")
    _add_common(p)
    p.add_argument("--n-list", dest="n_list", type=_parse_int_list, default=[],
                   metavar="N1,N2,...", help="grid sizes (must be perfect squares)")
    p.add_argument("--p-list", dest="p_list", type=_parse_int_list, default=[],
                   metavar="P1,P2,...", help="strip counts")
    p.add_argument("--alpha", type=float, default=0.0, help="per-message latency")
    p.add_argument("--beta", type=float, default=0.0, help="per-word cost")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        man = _manifest_from_args(args)
        if args.command == "solve":
            return cmd_solve(man)
        if args.command == "certify":
            return cmd_certify(man)
        if args.command == "partition":
            return cmd_partition(man, export=args.export)
        if args.command == "match":
            return cmd_match(man)
        if args.command == "gen-grid":
            return cmd_gen_grid(man)
        if args.command == "bench":
            if man.eps == Manifest.eps and args.eps is None:
                man.eps = 1e-10
            return cmd_bench(man, args.n_list, args.p_list, args.alpha, args.beta)
        raise VtmError(f"unknown command {args.command!r}")
    except (VtmError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
