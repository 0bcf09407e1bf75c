"""Sparse symmetric systems and their electric-graph representation.

A symmetric linear system A x = b is stored triangle-only (one entry per
unordered index pair).  Its electric graph carries the same data as vertex
weights (diagonal), edge weights (off-diagonal) and per-vertex current
sources (right-hand side); the two forms map onto each other exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from vtm.errors import MalformedInputError

# Relative pivot tolerance for the symmetric-factorization definiteness test.
PIVOT_TOL = 1e-12

# Above this dimension the definiteness test switches from the dense pivoted
# factorization to a sparse symmetric-mode LU (pivot signs give the inertia).
_DENSE_LIMIT = 1500


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (round-trip exact)."""
    return f"{x:.17g}"


@dataclass(frozen=True)
class SparseSymmetricSystem:
    """Symmetric system A x = b, entries stored with row <= col.

    Every diagonal position carries an explicit entry (zero-valued if the
    matrix has none) so that each unknown owns a vertex in the graph form.
    """

    dim: int
    entries: tuple[tuple[int, int, float], ...]
    rhs: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise MalformedInputError(f"dimension must be >= 1, got {self.dim}")
        if len(self.rhs) != self.dim:
            raise MalformedInputError(
                f"rhs length {len(self.rhs)} does not match dimension {self.dim}")
        seen: set[tuple[int, int]] = set()
        diag_seen: set[int] = set()
        for i, j, v in self.entries:
            if not (0 <= i <= j < self.dim):
                raise MalformedInputError(f"entry ({i}, {j}) out of range or not upper-triangle")
            if (i, j) in seen:
                raise MalformedInputError(f"duplicate entry for ({i}, {j})")
            seen.add((i, j))
            if i == j:
                diag_seen.add(i)
            elif v == 0.0:
                raise MalformedInputError(f"explicit zero off-diagonal at ({i}, {j})")
            if not math.isfinite(v):
                raise MalformedInputError(f"non-finite value at ({i}, {j})")
        if diag_seen != set(range(self.dim)):
            missing = sorted(set(range(self.dim)) - diag_seen)
            raise MalformedInputError(f"missing diagonal entries for indices {missing}")
        for b in self.rhs:
            if not math.isfinite(b):
                raise MalformedInputError("non-finite right-hand side value")

    @classmethod
    def make(cls, dim: int, entries: Iterable[tuple[int, int, float]],
             rhs: Sequence[float]) -> "SparseSymmetricSystem":
        """Canonical constructor: sorts entries, adds missing zero diagonals.

        Accepts entries in either triangle; (i, j) and (j, i) for the same
        pair count as duplicates.
        """
        norm: dict[tuple[int, int], float] = {}
        for i, j, v in entries:
            key = (i, j) if i <= j else (j, i)
            if key in norm:
                raise MalformedInputError(f"duplicate entry for {key}")
            norm[key] = float(v)
        for d in range(dim):
            norm.setdefault((d, d), 0.0)
        ordered = tuple((i, j, v) for (i, j), v in sorted(norm.items())
                        if i == j or v != 0.0)
        return cls(dim=dim, entries=ordered, rhs=tuple(float(b) for b in rhs))

    @classmethod
    def from_dense(cls, a: np.ndarray, b: Sequence[float]) -> "SparseSymmetricSystem":
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n) or not np.array_equal(a, a.T):
            raise MalformedInputError("matrix must be square and symmetric")
        entries = [(i, j, a[i, j]) for i in range(n) for j in range(i, n)
                   if a[i, j] != 0.0 or i == j]
        return cls.make(n, entries, b)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim))
        for i, j, v in self.entries:
            a[i, j] = v
            a[j, i] = v
        return a

    def to_csr(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for i, j, v in self.entries:
            rows.append(i)
            cols.append(j)
            vals.append(v)
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(v)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def rhs_array(self) -> np.ndarray:
        return np.array(self.rhs, dtype=float)


@dataclass(frozen=True)
class ElectricGraph:
    """Weighted undirected graph with per-vertex current sources.

    vertices: (id, weight, source) sorted by id covering 0..n-1.
    edges: (i, j, weight) with i < j, at most one per pair, nonzero weight.
    """

    vertices: tuple[tuple[int, float, float], ...]
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self) -> None:
        n = len(self.vertices)
        ids = [v[0] for v in self.vertices]
        if ids != list(range(n)):
            raise MalformedInputError("vertex ids must be exactly 0..n-1 in order")
        seen: set[tuple[int, int]] = set()
        for i, j, w in self.edges:
            if i == j:
                raise MalformedInputError(f"self-loop at vertex {i}")
            if not (0 <= i < j < n):
                raise MalformedInputError(f"edge ({i}, {j}) out of range or unordered")
            if (i, j) in seen:
                raise MalformedInputError(f"duplicate edge ({i}, {j})")
            if w == 0.0:
                raise MalformedInputError(f"zero-weight edge ({i}, {j})")
            seen.add((i, j))

    @property
    def dim(self) -> int:
        return len(self.vertices)

    def neighbors(self) -> dict[int, list[tuple[int, float]]]:
        """Adjacency: vertex -> [(neighbor, edge weight)]."""
        adj: dict[int, list[tuple[int, float]]] = {v[0]: [] for v in self.vertices}
        for i, j, w in self.edges:
            adj[i].append((j, w))
            adj[j].append((i, w))
        return adj


def system_to_graph(sys: SparseSymmetricSystem) -> ElectricGraph:
    """Map a symmetric system onto its electric graph.

    Vertex weight = diagonal entry, edge weight = off-diagonal entry, vertex
    current source = right-hand side entry.
    """
    weights = dict.fromkeys(range(sys.dim), 0.0)
    edges = []
    for i, j, v in sys.entries:
        if i == j:
            weights[i] = v
        else:
            edges.append((i, j, v))
    vertices = tuple((i, weights[i], sys.rhs[i]) for i in range(sys.dim))
    return ElectricGraph(vertices=vertices, edges=tuple(sorted(edges)))


def graph_to_system(g: ElectricGraph) -> SparseSymmetricSystem:
    """Exact inverse of :func:`system_to_graph`."""
    entries = [(i, i, w) for i, w, _ in g.vertices]
    entries.extend(g.edges)
    rhs = tuple(src for _, _, src in g.vertices)
    return SparseSymmetricSystem(dim=g.dim, entries=tuple(sorted(entries)), rhs=rhs)


def _pivoted_cholesky_classify(a: np.ndarray, pivot_tol: float) -> str:
    """Classify a dense symmetric matrix via diagonally pivoted factorization.

    Returns "spd", "snnd" or "indefinite".  A pivot counts as positive when
    it exceeds pivot_tol * max|diag|; once no positive pivot remains, the
    untouched trailing block must vanish for the matrix to be semidefinite.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    scale = float(np.abs(np.diag(a)).max(initial=0.0))
    if scale == 0.0:
        # zero diagonal: semidefinite only if the whole matrix is zero
        offscale = float(np.abs(a).max(initial=0.0))
        return "snnd" if offscale == 0.0 else "indefinite"
    tol = pivot_tol * scale
    active = list(range(n))
    for _ in range(n):
        diag = a[active, active]
        k = int(np.argmax(diag))
        d = diag[k]
        if d <= tol:
            break
        p = active.pop(k)
        col = a[np.ix_(active, [p])][:, 0]
        a[np.ix_(active, active)] -= np.outer(col, col) / d
    else:
        return "spd"
    rem = a[np.ix_(active, active)]
    if rem.size and float(np.diag(rem).min()) < -tol:
        return "indefinite"
    # semidefinite remainder must be (numerically) zero throughout
    if rem.size and float(np.abs(rem).max()) > 16.0 * max(len(active), 1) * tol:
        return "indefinite"
    return "snnd"


def _sparse_inertia_classify(mat: sp.spmatrix, pivot_tol: float) -> str:
    """Large-matrix definiteness via symmetric-mode LU pivot signs."""
    csc = sp.csc_matrix(mat)
    scale = float(np.abs(csc.diagonal()).max(initial=0.0))
    if scale == 0.0:
        return "snnd" if csc.nnz == 0 else "indefinite"
    tol = pivot_tol * scale
    try:
        lu = spla.splu(csc, diag_pivot_thresh=0.0, permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True))
    except RuntimeError:
        # exactly singular factor: decide semidefinite vs indefinite by shift
        shifted = csc + tol * sp.identity(csc.shape[0], format="csc")
        try:
            lu = spla.splu(shifted, diag_pivot_thresh=0.0, permc_spec="MMD_AT_PLUS_A",
                           options=dict(SymmetricMode=True))
        except RuntimeError:
            return "indefinite"
        return "snnd" if float(lu.U.diagonal().min()) > 0.0 else "indefinite"
    pivots = lu.U.diagonal()
    if float(pivots.min()) > tol:
        return "spd"
    if float(pivots.min()) >= -tol:
        return "snnd"
    return "indefinite"


def classify_definiteness(obj: "SparseSymmetricSystem | np.ndarray | sp.spmatrix",
                          pivot_tol: float = PIVOT_TOL) -> str:
    """Classify a symmetric operand as "spd", "snnd" or "indefinite"."""
    if isinstance(obj, SparseSymmetricSystem):
        if obj.dim <= _DENSE_LIMIT:
            return _pivoted_cholesky_classify(obj.to_dense(), pivot_tol)
        return _sparse_inertia_classify(obj.to_csr(), pivot_tol)
    if sp.issparse(obj):
        if obj.shape[0] <= _DENSE_LIMIT:
            return _pivoted_cholesky_classify(obj.toarray(), pivot_tol)
        return _sparse_inertia_classify(obj, pivot_tol)
    return _pivoted_cholesky_classify(np.asarray(obj, dtype=float), pivot_tol)


def is_spd(sys: SparseSymmetricSystem, pivot_tol: float = PIVOT_TOL) -> bool:
    """True iff the system's matrix admits a positive-pivot factorization."""
    return classify_definiteness(sys, pivot_tol) == "spd"


# ---------------------------------------------------------------------------
# File formats: Matrix Market coordinate symmetric + one-value-per-line vector
# ---------------------------------------------------------------------------

_MM_HEADER = "%%MatrixMarket matrix coordinate real symmetric"


def write_matrix(sys: SparseSymmetricSystem, path: str) -> None:
    """Write the matrix in Matrix Market coordinate symmetric format."""
    lines = [_MM_HEADER, f"{sys.dim} {sys.dim} {len(sys.entries)}"]
    for i, j, v in sys.entries:
        # symmetric coordinate format keeps the lower triangle: row >= col
        lines.append(f"{j + 1} {i + 1} {format_float(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix(path: str, rhs: Sequence[float] | None = None) -> SparseSymmetricSystem:
    """Read a Matrix Market coordinate symmetric file.

    The rhs defaults to zeros; pass a vector (e.g. from read_vector) to
    attach the actual sources.
    """
    with open(path) as fh:
        header = fh.readline().strip()
        fields = header.lower().split()
        if (len(fields) != 5 or fields[0] != "%%matrixmarket"
                or fields[1:4] != ["matrix", "coordinate", "real"]
                or fields[4] != "symmetric"):
            raise MalformedInputError(
                f"expected coordinate real symmetric Matrix Market header, got: {header!r}")
        size_line = ""
        for line in fh:
            if line.startswith("%") or not line.strip():
                continue
            size_line = line
            break
        if not size_line:
            raise MalformedInputError("missing size line")
        rows, cols, nnz = (int(t) for t in size_line.split())
        if rows != cols:
            raise MalformedInputError(f"matrix must be square, got {rows}x{cols}")
        entries = []
        for line in fh:
            if line.startswith("%") or not line.strip():
                continue
            si, sj, sv = line.split()
            i, j = int(si) - 1, int(sj) - 1
            entries.append((i, j, float(sv)))
        if len(entries) != nnz:
            raise MalformedInputError(f"expected {nnz} entries, found {len(entries)}")
    if rhs is None:
        rhs = [0.0] * rows
    if len(rhs) != rows:
        raise MalformedInputError(f"rhs length {len(rhs)} does not match matrix size {rows}")
    return SparseSymmetricSystem.make(rows, entries, rhs)


def write_vector(vec: Sequence[float], path: str) -> None:
    with open(path, "w") as fh:
        for x in vec:
            fh.write(format_float(float(x)) + "\n")


def read_vector(path: str) -> list[float]:
    out = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s or s.startswith(("%", "#")):
                continue
            out.append(float(s))
    return out


def read_system(matrix_path: str, rhs_path: str) -> SparseSymmetricSystem:
    return read_matrix(matrix_path, rhs=read_vector(rhs_path))


def write_system(sys: SparseSymmetricSystem, matrix_path: str, rhs_path: str) -> None:
    write_matrix(sys, matrix_path)
    write_vector(sys.rhs, rhs_path)
