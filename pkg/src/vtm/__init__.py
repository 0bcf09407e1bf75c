"""Distributed transmission-line iteration for sparse SPD linear systems.

The toolkit solves a symmetric positive-definite system by viewing it as an
electric graph (vertex weights, edge weights, current sources), tearing the
graph into subdomains by splitting boundary vertices into twins, and coupling
the twins with virtual transmission lines.  Each subdomain then performs
independent factorized solves, exchanging only (potential, current) pairs
with its neighbors once per iteration.

Modules
-------
core_graph    system <-> electric-graph mapping, SPD classification, file I/O
partitioner   vertex splitting, conformal schemes, merge
local_solver  per-subdomain assembly, preconditioning, impedance matching
runtime       bulk-synchronous neighbor-to-neighbor iteration engine
analysis      boundary operator, iteration matrix, convergence certification
perf_model    parallel/sequential cost model
testbench     2D-grid generators and partitions
cli           command-line front end
"""

from vtm.core_graph import ElectricGraph, SparseSymmetricSystem, graph_to_system, is_spd, system_to_graph
from vtm.partitioner import PartitionScheme, SplitSystem, Subdomain, default_conformal_scheme, merge, split, verify_conformal
from vtm.local_solver import ImpedanceAssignment, VirtualTransmissionLine, assemble, input_impedance, match_impedances, precondition
from vtm.runtime import IterationReport, RunConfig, run_vtm
from vtm.analysis import build_global_operator, certify_convergence, direct_solve, iteration_matrix

__all__ = [
    "ElectricGraph",
    "SparseSymmetricSystem",
    "system_to_graph",
    "graph_to_system",
    "is_spd",
    "PartitionScheme",
    "Subdomain",
    "SplitSystem",
    "split",
    "default_conformal_scheme",
    "verify_conformal",
    "merge",
    "VirtualTransmissionLine",
    "ImpedanceAssignment",
    "assemble",
    "precondition",
    "input_impedance",
    "match_impedances",
    "RunConfig",
    "IterationReport",
    "run_vtm",
    "direct_solve",
    "build_global_operator",
    "iteration_matrix",
    "certify_convergence",
]
