"""Abstract cost model for the partitioned iteration.

Time units are flops at top speed; messages between adjacent processors
cost alpha + beta * words.  A p-way regular partition of an n-vertex grid
leaves each processor a subgrid of size b = n/p + 2*sqrt(n/p) (the halo is
kept exact rather than approximated away, since it matters at desk scale).
One factorization costs b^1.5 and each of the K iterations costs a
substitution (2b) plus one neighbor exchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from vtm.errors import MalformedInputError
from vtm.runtime import IterationReport


@dataclass(frozen=True)
class MachineModel:
    """Per-message latency alpha, per-word cost beta, processor count p."""

    alpha: float = 0.0
    beta: float = 0.0
    p: int = 1

    def __post_init__(self) -> None:
        if self.alpha < 0.0 or self.beta < 0.0:
            raise MalformedInputError("alpha and beta must be non-negative")
        if self.p < 1:
            raise MalformedInputError("processor count must be >= 1")


def subgrid_size(n: float, p: float) -> float:
    """Per-processor problem size including the halo overlap."""
    return n / p + 2.0 * math.sqrt(n / p)


def parallel_time(n: int, p: int, k: int, model: MachineModel) -> float:
    """Factor once, then K substitutions with one neighbor exchange each."""
    if not n >= p >= 1:
        raise MalformedInputError(f"need n >= p >= 1, got n={n}, p={p}")
    if k < 1:
        raise MalformedInputError(f"iteration count must be >= 1, got {k}")
    b = subgrid_size(n, p)
    return b ** 1.5 + k * (2.0 * b + model.alpha + model.beta * math.sqrt(b))


def sequential_time(n: int) -> float:
    if n < 1:
        raise MalformedInputError(f"dimension must be >= 1, got {n}")
    return n ** 1.5 + 2.0 * n


def speedup(n: int, p: int, k: int, model: MachineModel) -> float:
    return sequential_time(n) / parallel_time(n, p, k, model)


def measure_K(report: IterationReport, epsilon: float) -> int | None:
    """Smallest iteration index whose oracle RMS error is <= epsilon."""
    for rec in report.records:
        if rec.rms_error is None:
            raise MalformedInputError("report lacks oracle RMS errors")
        if rec.rms_error <= epsilon:
            return rec.k
    return None
