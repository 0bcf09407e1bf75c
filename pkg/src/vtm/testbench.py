"""2D-grid test systems and their regular partitions.

The generated operator is the 5-point grid Laplacian (edge weight -1,
vertex weight = degree) plus a diagonal shift sigma > 0 that makes it
strictly diagonally dominant, hence SPD.  Strip partitions cut along
columns; block partitions cut along rows and columns, turning the cut
intersections into four-way split vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vtm.core_graph import ElectricGraph
from vtm.errors import MalformedInputError
from vtm.partitioner import PartitionScheme, default_conformal_scheme

NATIVE_SIZES = (289, 1089, 2401, 4225, 9409, 14641)

DEFAULT_SIGMA = 0.01


@dataclass(frozen=True)
class GridSpec:
    """m x m grid with diagonal shift sigma and a strip or block partition."""

    side: int
    sigma: float = DEFAULT_SIGMA
    strips: int | None = None
    blocks: tuple[int, int] | None = None
    rhs_seed: int | None = None  # None: all-ones sources

    def __post_init__(self) -> None:
        if self.side < 2:
            raise MalformedInputError(f"grid side must be >= 2, got {self.side}")
        if self.sigma < 0.0:
            raise MalformedInputError(f"diagonal shift must be >= 0, got {self.sigma}")
        if self.strips is not None and self.blocks is not None:
            raise MalformedInputError("choose strips or blocks, not both")
        if self.strips is not None and self.strips < 1:
            raise MalformedInputError("strip count must be >= 1")
        if self.blocks is not None and (self.blocks[0] < 1 or self.blocks[1] < 1):
            raise MalformedInputError("block grid must be at least 1x1")

    @property
    def dim(self) -> int:
        return self.side * self.side


def grid_system(spec: GridSpec) -> ElectricGraph:
    """5-point stencil: edge weight -1, vertex weight degree + sigma."""
    m = spec.side
    n = spec.dim

    def vid(r: int, c: int) -> int:
        return r * m + c

    degree = np.zeros(n, dtype=int)
    edges = []
    for r in range(m):
        for c in range(m):
            v = vid(r, c)
            if c + 1 < m:
                edges.append((v, vid(r, c + 1), -1.0))
                degree[v] += 1
                degree[vid(r, c + 1)] += 1
            if r + 1 < m:
                edges.append((v, vid(r + 1, c), -1.0))
                degree[v] += 1
                degree[vid(r + 1, c)] += 1
    if spec.rhs_seed is None:
        sources = np.ones(n)
    else:
        sources = np.random.default_rng(spec.rhs_seed).standard_normal(n)
    vertices = tuple((v, float(degree[v]) + spec.sigma, float(sources[v]))
                     for v in range(n))
    return ElectricGraph(vertices=vertices, edges=tuple(sorted(edges)))


def _axis_layout(m: int, count: int) -> tuple[list[list[int]], list[int]]:
    """Split m lines into `count` groups with one separator line between
    consecutive groups.  Group widths are chosen so the subdomain sizes
    (inner width plus adjacent separators) stay within one line of each
    other."""
    if count == 1:
        return [list(range(m))], []
    if count > m:
        raise MalformedInputError(f"cannot cut {m} lines into {count} parts")
    total = m + (count - 1)
    sizes = [total // count + (1 if i < total % count else 0) for i in range(count)]
    groups: list[list[int]] = []
    seps: list[int] = []
    cursor = 0
    for i, size in enumerate(sizes):
        width = size - (1 if i in (0, count - 1) else 2)
        if width < 1:
            raise MalformedInputError(
                f"{count} parts leave no interior for {m} lines; need m >= 2*count - 1")
        groups.append(list(range(cursor, cursor + width)))
        cursor += width
        if i < count - 1:
            seps.append(cursor)
            cursor += 1
    assert cursor == m
    return groups, seps


def grid_partition(spec: GridSpec) -> tuple[dict[int, int], PartitionScheme]:
    """Regular partition: assignment of inner vertices plus the conformal scheme.

    Vertices on cut lines are left unassigned (they become boundary); cut
    intersections in block partitions are pinned to a four-way ring over
    the surrounding blocks.
    """
    m = spec.side
    g = grid_system(spec)

    def vid(r: int, c: int) -> int:
        return r * m + c

    if spec.blocks is None:
        count = spec.strips if spec.strips is not None else 1
        col_groups, col_seps = _axis_layout(m, count)
        col_of = {}
        for gi, cols in enumerate(col_groups):
            for c in cols:
                col_of[c] = gi
        assignment = {vid(r, c): col_of[c]
                      for r in range(m) for c in range(m) if c in col_of}
        scheme = default_conformal_scheme(g, assignment)
        return assignment, scheme

    rows_cnt, cols_cnt = spec.blocks
    row_groups, row_seps = _axis_layout(m, rows_cnt)
    col_groups, col_seps = _axis_layout(m, cols_cnt)
    row_of = {}
    for gi, rows in enumerate(row_groups):
        for r in rows:
            row_of[r] = gi
    col_of = {}
    for gi, cols in enumerate(col_groups):
        for c in cols:
            col_of[c] = gi

    def block_id(bi: int, bj: int) -> int:
        return bi * cols_cnt + bj

    assignment = {}
    for r in range(m):
        for c in range(m):
            if r in row_of and c in col_of:
                assignment[vid(r, c)] = block_id(row_of[r], col_of[c])

    # cut intersections become four-way splits over the surrounding blocks,
    # ring-ordered so consecutive children live in edge-adjacent blocks
    sides_override = {}
    for r in row_seps:
        bi = row_of[r - 1]
        for c in col_seps:
            bj = col_of[c - 1]
            ring = (block_id(bi, bj), block_id(bi, bj + 1),
                    block_id(bi + 1, bj + 1), block_id(bi + 1, bj))
            sides_override[vid(r, c)] = ring
    scheme = default_conformal_scheme(g, assignment, sides_override=sides_override)
    return assignment, scheme
