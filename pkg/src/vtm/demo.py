"""Built-in demonstration cases.

"example51" is the classic six-vertex walkthrough: a 6x6 SPD system torn at
vertices 2 and 3 (0-based) into two four-vertex subdomains with published
asymmetric shares, coupled by two lines of impedance 1.0 and 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

from vtm.core_graph import SparseSymmetricSystem, system_to_graph
from vtm.errors import MalformedInputError
from vtm.local_solver import ImpedanceAssignment
from vtm.partitioner import EdgeSplit, PartitionScheme, SplitSystem, VertexSplit, split


@dataclass(frozen=True)
class DemoCase:
    name: str
    system: SparseSymmetricSystem
    scheme: PartitionScheme
    impedances: ImpedanceAssignment

    def split_system(self) -> SplitSystem:
        return split(system_to_graph(self.system), self.scheme)


def six_vertex_system() -> SparseSymmetricSystem:
    matrix = [
        [6, -1, -2, 0, 0, 0],
        [-1, 7, 0, -1, 0, 0],
        [-2, 0, 8, -2, -1, 0],
        [0, -1, -2, 9, 0, -3],
        [0, 0, -1, 0, 10, -5],
        [0, 0, 0, -3, -5, 11],
    ]
    entries = [(i, j, float(matrix[i][j]))
               for i in range(6) for j in range(i, 6)
               if matrix[i][j] != 0 or i == j]
    return SparseSymmetricSystem.make(6, entries, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def six_vertex_scheme() -> PartitionScheme:
    return PartitionScheme(
        assignment={0: 0, 1: 0, 4: 1, 5: 1},
        splits={
            2: VertexSplit(sides=(0, 1), weights=(4.8, 3.2), sources=(1.6, 1.4)),
            3: VertexSplit(sides=(0, 1), weights=(3.5, 5.5), sources=(1.8, 2.2)),
        },
        edge_splits={(2, 3): EdgeSplit(sides=(0, 1), weights=(-0.9, -1.1))},
    )


def six_vertex_case() -> DemoCase:
    return DemoCase(
        name="example51",
        system=six_vertex_system(),
        scheme=six_vertex_scheme(),
        impedances=ImpedanceAssignment(by_vtl={"v2": 1.0, "v3": 0.5}),
    )


DEMOS = {"example51": six_vertex_case}


def get_demo(name: str) -> DemoCase:
    try:
        return DEMOS[name]()
    except KeyError:
        raise MalformedInputError(
            f"unknown demo {name!r}; available: {', '.join(sorted(DEMOS))}") from None
