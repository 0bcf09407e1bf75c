"""Shared fixtures and randomized-case generators."""

from __future__ import annotations

import numpy as np
import pytest

from vtm.core_graph import ElectricGraph, SparseSymmetricSystem, system_to_graph
from vtm.demo import get_demo, six_vertex_scheme, six_vertex_system
from vtm.partitioner import PartitionScheme, default_conformal_scheme


@pytest.fixture
def six_system() -> SparseSymmetricSystem:
    return six_vertex_system()


@pytest.fixture
def six_graph(six_system) -> ElectricGraph:
    return system_to_graph(six_system)


@pytest.fixture
def six_scheme() -> PartitionScheme:
    return six_vertex_scheme()


@pytest.fixture
def demo_case():
    return get_demo("example51")


def random_dd_system(rng: np.random.Generator, n: int,
                     extra_edges: int | None = None,
                     max_span: int | None = None) -> SparseSymmetricSystem:
    """Random strictly diagonally dominant SPD system on a connected graph.

    A chain backbone keeps the graph connected; extra random chords densify
    it (max_span bounds |i - j| for chords).  Diagonals exceed each row's
    absolute off-diagonal sum by a random positive margin, so the default
    conformal scheme always applies.
    """
    if extra_edges is None:
        extra_edges = n
    pairs = {(i, i + 1) for i in range(n - 1)}
    for _ in range(extra_edges):
        i, j = rng.integers(0, n, size=2)
        if i != j and (max_span is None or abs(int(i) - int(j)) <= max_span):
            pairs.add((min(i, j), max(i, j)))
    offdiag = {}
    for i, j in sorted(pairs):
        w = float(rng.uniform(0.2, 1.5) * rng.choice([-1.0, 1.0]))
        offdiag[(i, j)] = w
    rowsum = np.zeros(n)
    for (i, j), w in offdiag.items():
        rowsum[i] += abs(w)
        rowsum[j] += abs(w)
    entries = [(i, j, w) for (i, j), w in offdiag.items()]
    for i in range(n):
        entries.append((i, i, rowsum[i] + float(rng.uniform(0.05, 2.0))))
    rhs = rng.uniform(-3.0, 3.0, size=n)
    return SparseSymmetricSystem.make(n, entries, rhs)


def random_split_case(rng: np.random.Generator, n: int,
                      nsub: int = 2) -> tuple[ElectricGraph, PartitionScheme]:
    """Random dominant system plus a twin-split conformal scheme.

    Vertices are assigned in contiguous index blocks; chord lengths are
    bounded by the block width so no vertex can touch more than two
    subdomains, keeping every split a twin split.
    """
    nsub = min(nsub, max(2, n // 2))
    # a chord may reach at most one neighboring block, never across a block
    sys = random_dd_system(rng, n, max_span=max(1, (n // nsub) // 2))
    graph = system_to_graph(sys)
    assignment = {v: v * nsub // n for v in range(n)}
    scheme = default_conformal_scheme(graph, assignment)
    assert scheme.splits and scheme.num_subdomains >= 2 and scheme.split_level == 1
    return graph, scheme


def eig_classify(a: np.ndarray, tol: float = 1e-10) -> str:
    """Eigenvalue-sign oracle for definiteness, independent of factorization."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return "snnd"
    w = np.linalg.eigvalsh(a)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() > tol * scale:
        return "spd"
    if w.min() >= -tol * scale:
        return "snnd"
    return "indefinite"
