"""Per-subdomain computation for the transmission-line iteration.

A subdomain's torn system reads

    [C  E] [u]   [f]   [w]
    [F  D] [y] = [g] + [0]

with ports (split children) ordered first.  Coupling each port's inflow
current w to its twin through a line of impedance z and eliminating w gives
the impedance-augmented system whose port diagonal gains 1/z; that matrix is
factored once and reused every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from vtm.core_graph import classify_definiteness, format_float
from vtm.errors import FactorizationError, MalformedInputError, SingularSystemError

if TYPE_CHECKING:
    from vtm.partitioner import PortRef, SplitSystem, Subdomain

# local systems larger than this are stored and factored sparse
DENSE_LOCAL_LIMIT = 500

_FACTOR_CHECK_TOL = 1e-10


@dataclass(frozen=True)
class VirtualTransmissionLine:
    """Iterative coupling between a pair of twin ports.

    Endpoints are (subdomain id, port index) pairs referencing mutual twins;
    the delay is fixed at one iteration.
    """

    id: str
    parent: int
    end_a: tuple[int, int]
    end_b: tuple[int, int]
    z: float = 1.0
    delay: int = 1

    def __post_init__(self) -> None:
        if not (self.z > 0.0 and math.isfinite(self.z)):
            raise MalformedInputError(f"line {self.id}: impedance must be positive, got {self.z}")
        if self.end_a[0] == self.end_b[0]:
            raise MalformedInputError(f"line {self.id}: endpoints must be in distinct subdomains")
        if self.delay != 1:
            raise MalformedInputError(f"line {self.id}: delay is fixed at one iteration")


@dataclass(frozen=True)
class ImpedanceMatrix:
    """Impedance acting on one subdomain's ports.

    diagonal: one positive z per port (uncoupled lines).
    full: SPD matrix over the subdomain's port vertices (coupled lines).
    """

    kind: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind == "diagonal":
            v = np.asarray(self.values, dtype=float)
            if v.ndim != 1 or (v.size and v.min() <= 0.0) or not np.isfinite(v).all():
                raise MalformedInputError("diagonal impedances must be positive finite reals")
        elif self.kind == "full":
            m = np.asarray(self.values, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.array_equal(m, m.T):
                raise MalformedInputError("coupled impedance must be a symmetric matrix")
            if m.size and classify_definiteness(m) != "spd":
                raise MalformedInputError("coupled impedance matrix must be SPD")
        else:
            raise MalformedInputError(f"unknown impedance kind {self.kind!r}")


@dataclass(frozen=True)
class ImpedanceAssignment:
    """Run-level impedance source: per-line scalars or per-subdomain matrices."""

    by_vtl: Mapping[str, float] | None = None
    by_subdomain: Mapping[int, np.ndarray] | None = None

    def __post_init__(self) -> None:
        if (self.by_vtl is None) == (self.by_subdomain is None):
            raise MalformedInputError(
                "exactly one of per-line and per-subdomain impedances must be given")

    @property
    def coupled(self) -> bool:
        return self.by_subdomain is not None

    @classmethod
    def constant(cls, s: "SplitSystem", z: float) -> "ImpedanceAssignment":
        return cls(by_vtl={line.id: float(z) for line in s.vtls})

    @classmethod
    def from_vtls(cls, s: "SplitSystem") -> "ImpedanceAssignment":
        return cls(by_vtl={line.id: line.z for line in s.vtls})

    def vtl_impedances(self, s: "SplitSystem") -> np.ndarray:
        if self.coupled:
            raise MalformedInputError("per-line impedances undefined for a coupled assignment")
        assert self.by_vtl is not None
        try:
            zs = np.array([self.by_vtl[line.id] for line in s.vtls], dtype=float)
        except KeyError as exc:
            raise MalformedInputError(f"no impedance assigned for line {exc.args[0]}") from None
        if zs.size and (zs.min() <= 0.0 or not np.isfinite(zs).all()):
            raise MalformedInputError("line impedances must be positive finite reals")
        return zs

    def local_matrix(self, s: "SplitSystem", sub_id: int) -> ImpedanceMatrix:
        sub = s.subdomains[sub_id]
        if not self.coupled:
            zs = self.vtl_impedances(s)
            return ImpedanceMatrix(kind="diagonal",
                                   values=np.array([zs[p.vtl_index] for p in sub.ports]))
        assert self.by_subdomain is not None
        if sub_id not in self.by_subdomain:
            raise MalformedInputError(f"no impedance matrix for subdomain {sub_id}")
        m = np.asarray(self.by_subdomain[sub_id], dtype=float)
        if len(sub.ports) != len(sub.port_vertices):
            raise MalformedInputError(
                "coupled impedances support only single-line ports (twin splits)")
        if m.shape != (len(sub.ports), len(sub.ports)):
            raise MalformedInputError(
                f"impedance matrix for subdomain {sub_id} has shape {m.shape}, "
                f"expected ({len(sub.ports)}, {len(sub.ports)})")
        return ImpedanceMatrix(kind="full", values=m)


def with_impedances(s: "SplitSystem", assignment: ImpedanceAssignment) -> "SplitSystem":
    """Bake per-line impedances into the split system's line records."""
    zs = assignment.vtl_impedances(s)
    vtls = tuple(replace(line, z=float(z)) for line, z in zip(s.vtls, zs))
    return replace(s, vtls=vtls)


@dataclass(frozen=True)
class LocalSystem:
    """One subdomain's blocks under (ports, inner) ordering."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    port_vertices: tuple[int, ...]
    inner_vertices: tuple[int, ...]
    ports: tuple["PortRef", ...]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def f(self) -> np.ndarray:
        return self.rhs[list(self.port_vertices)]

    @property
    def g(self) -> np.ndarray:
        return self.rhs[list(self.inner_vertices)]

    def _block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        if not len(rows) or not len(cols):
            return np.zeros((len(rows), len(cols)))
        return self.matrix[np.ix_(rows, cols)].toarray()

    @property
    def C(self) -> np.ndarray:
        return self._block(self.port_vertices, self.port_vertices)

    @property
    def E(self) -> np.ndarray:
        return self._block(self.port_vertices, self.inner_vertices)

    @property
    def F(self) -> np.ndarray:
        return self._block(self.inner_vertices, self.port_vertices)

    @property
    def D(self) -> np.ndarray:
        return self._block(self.inner_vertices, self.inner_vertices)


def assemble(sub: "Subdomain") -> LocalSystem:
    """Extract the (ports, inner) block view of a subdomain's torn system."""
    sys = sub.system()
    return LocalSystem(matrix=sys.to_csr(), rhs=sys.rhs_array(),
                       port_vertices=sub.port_vertices, inner_vertices=sub.inner,
                       ports=sub.ports)


class _DenseFactor:
    def __init__(self, mat: np.ndarray):
        try:
            self._cf = la.cho_factor(mat, lower=True)
        except la.LinAlgError as exc:
            raise FactorizationError(f"local system is not SPD: {exc}") from exc
        lower = np.tril(self._cf[0])
        resid = float(np.abs(lower @ lower.T - mat).max())
        scale = max(1.0, float(np.abs(mat).max()))
        if resid > _FACTOR_CHECK_TOL * scale:
            raise FactorizationError(
                f"factorization residual {resid:.3e} exceeds {_FACTOR_CHECK_TOL} relative")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return la.cho_solve(self._cf, rhs)


class _SparseFactor:
    def __init__(self, mat: sp.spmatrix):
        csc = sp.csc_matrix(mat)
        try:
            self._lu = spla.splu(csc, diag_pivot_thresh=0.0, permc_spec="MMD_AT_PLUS_A",
                                 options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise FactorizationError(f"local factorization failed: {exc}") from exc
        if float(self._lu.U.diagonal().min()) <= 0.0:
            raise FactorizationError("local system is not SPD (nonpositive pivot)")
        # probe solve in place of the dense reconstruction check
        probe = np.cos(np.arange(csc.shape[0], dtype=float))
        resid = float(np.abs(csc @ self._lu.solve(probe) - probe).max())
        if resid > _FACTOR_CHECK_TOL * max(1.0, float(np.abs(probe).max())):
            raise FactorizationError(f"factorization probe residual {resid:.3e} too large")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs)


@dataclass(frozen=True)
class FactoredLocal:
    """Reusable factorization of the impedance-augmented local system."""

    local: LocalSystem
    impedance: ImpedanceMatrix
    factor: "_DenseFactor | _SparseFactor"
    augmented: sp.csr_matrix
    # per-port 1/z for diagonal impedances, else the dense inverse block
    zinv_diag: np.ndarray | None
    zinv_full: np.ndarray | None

    @property
    def dim(self) -> int:
        return self.local.dim


def precondition(sys: LocalSystem, impedance: ImpedanceMatrix) -> FactoredLocal:
    """Add the inverse impedance to the port block and factor the result."""
    mat = sp.lil_matrix(sys.matrix, dtype=float)
    zinv_diag = None
    zinv_full = None
    if impedance.kind == "diagonal":
        if len(impedance.values) != len(sys.ports):
            raise MalformedInputError(
                f"{len(impedance.values)} impedances for {len(sys.ports)} ports")
        zinv_diag = 1.0 / np.asarray(impedance.values, dtype=float)
        for p, zi in zip(sys.ports, zinv_diag):
            mat[p.local_index, p.local_index] += zi
    else:
        pv = list(sys.port_vertices)
        if impedance.values.shape != (len(pv), len(pv)):
            raise MalformedInputError("impedance matrix size does not match port count")
        if len(sys.ports) != len(pv):
            raise MalformedInputError("coupled impedances require single-line ports")
        try:
            cf = la.cho_factor(impedance.values, lower=True)
        except la.LinAlgError as exc:
            raise FactorizationError(f"impedance matrix is not SPD: {exc}") from exc
        zinv_full = la.cho_solve(cf, np.eye(len(pv)))
        zinv_full = 0.5 * (zinv_full + zinv_full.T)
        mat[np.ix_(pv, pv)] = mat[np.ix_(pv, pv)].toarray() + zinv_full
    if sys.dim <= DENSE_LOCAL_LIMIT:
        factor: _DenseFactor | _SparseFactor = _DenseFactor(mat.toarray())
    else:
        factor = _SparseFactor(mat.tocsc())
    return FactoredLocal(local=sys, impedance=impedance, factor=factor,
                         augmented=mat.tocsr(), zinv_diag=zinv_diag, zinv_full=zinv_full)


class LocalIterate(NamedTuple):
    u: np.ndarray        # port potentials, one per port (line attachment)
    y: np.ndarray        # inner potentials
    omega: np.ndarray    # port inflow currents, one per port
    x_local: np.ndarray  # full local potential vector


def local_iterate(fac: FactoredLocal, f_j: np.ndarray, g_j: np.ndarray,
                  incoming: tuple[np.ndarray, np.ndarray]) -> LocalIterate:
    """One update: solve the augmented system against the received variables.

    incoming carries the twins' previous (potential, current) per port, in
    port order.  The received combination r = u_twin - Z w_twin enters the
    right-hand side as Z^-1 r, and the new currents are Z^-1 (r - u).
    """
    sys = fac.local
    u_twin = np.asarray(incoming[0], dtype=float)
    w_twin = np.asarray(incoming[1], dtype=float)
    nports = len(sys.ports)
    if u_twin.shape != (nports,) or w_twin.shape != (nports,):
        raise MalformedInputError(
            f"incoming vectors must have {nports} entries, got {u_twin.shape}, {w_twin.shape}")
    if len(f_j) != len(sys.port_vertices) or len(g_j) != len(sys.inner_vertices):
        raise MalformedInputError("source vectors do not match the port/inner split")

    rhs = np.zeros(sys.dim)
    rhs[list(sys.port_vertices)] = f_j
    rhs[list(sys.inner_vertices)] = g_j
    port_locals = np.array([p.local_index for p in sys.ports], dtype=int)
    if fac.zinv_diag is not None:
        z = np.asarray(fac.impedance.values, dtype=float)
        received = u_twin - z * w_twin
        np.add.at(rhs, port_locals, received * fac.zinv_diag)
        x = fac.factor.solve(rhs)
        u = x[port_locals]
        omega = (received - u) * fac.zinv_diag
    else:
        z_mat = fac.impedance.values
        received = u_twin - z_mat @ w_twin
        rhs[port_locals] += fac.zinv_full @ received
        x = fac.factor.solve(rhs)
        u = x[port_locals]
        omega = fac.zinv_full @ (received - u)
    y = x[list(sys.inner_vertices)]
    return LocalIterate(u=u, y=y, omega=omega, x_local=x)


def consistency_residuals(fac: FactoredLocal, f_j: np.ndarray, g_j: np.ndarray,
                          incoming: tuple[np.ndarray, np.ndarray],
                          result: LocalIterate) -> tuple[float, float]:
    """Residuals of the torn block equations and of the line relation.

    Returns (max residual of [C E; F D](u;y) = (f;g) + (w;0),
             max residual of u + Z w = received).
    """
    sys = fac.local
    rhs0 = np.zeros(sys.dim)
    rhs0[list(sys.port_vertices)] = f_j
    rhs0[list(sys.inner_vertices)] = g_j
    port_locals = np.array([p.local_index for p in sys.ports], dtype=int)
    np.add.at(rhs0, port_locals, result.omega)
    block_res = float(np.abs(sys.matrix @ result.x_local - rhs0).max(initial=0.0))
    if fac.impedance.kind == "diagonal":
        z = np.asarray(fac.impedance.values, dtype=float)
        received = incoming[0] - z * incoming[1]
        line_res = float(np.abs(result.u + z * result.omega - received).max(initial=0.0))
    else:
        z_mat = fac.impedance.values
        received = incoming[0] - z_mat @ incoming[1]
        line_res = float(np.abs(result.u + z_mat @ result.omega - received).max(initial=0.0))
    return block_res, line_res


def input_impedance(sys: LocalSystem, port: int) -> float:
    """Port potential under unit inflow current with all sources zeroed."""
    if not 0 <= port < len(sys.ports):
        raise MalformedInputError(f"port index {port} out of range")
    vertex = sys.ports[port].local_index
    e = np.zeros(sys.dim)
    e[vertex] = 1.0
    if sys.dim <= DENSE_LOCAL_LIMIT:
        dense = sys.matrix.toarray()
        try:
            cf = la.cho_factor(dense, lower=True)
        except la.LinAlgError as exc:
            raise SingularSystemError(
                f"input impedance undefined: local system not SPD ({exc})") from exc
        x = la.cho_solve(cf, e)
    else:
        try:
            lu = spla.splu(sp.csc_matrix(sys.matrix), diag_pivot_thresh=0.0,
                           permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularSystemError(f"input impedance undefined: {exc}") from exc
        if float(lu.U.diagonal().min()) <= 0.0:
            raise SingularSystemError("input impedance undefined: local system not SPD")
        x = lu.solve(e)
    return float(x[vertex])


MATCH_POLICIES = ("side_a", "side_b", "mean")


def match_impedances(s: "SplitSystem", policy: str = "mean") -> ImpedanceAssignment:
    """Set each line's impedance from its ports' input impedances.

    policy "side_a"/"side_b" copies one endpoint's input impedance, "mean"
    takes their arithmetic mean.
    """
    if policy not in MATCH_POLICIES:
        raise MalformedInputError(f"unknown matching policy {policy!r}")
    r_in: list[dict[int, float]] = []
    for sub in s.subdomains:
        local = assemble(sub)
        values: dict[int, float] = {}
        if local.ports:
            if local.dim <= DENSE_LOCAL_LIMIT:
                dense = local.matrix.toarray()
                try:
                    cf = la.cho_factor(dense, lower=True)
                except la.LinAlgError as exc:
                    raise SingularSystemError(
                        f"subdomain {sub.id} is not SPD; cannot match impedances") from exc
                for v in local.port_vertices:
                    e = np.zeros(local.dim)
                    e[v] = 1.0
                    values[v] = float(la.cho_solve(cf, e)[v])
            else:
                try:
                    lu = spla.splu(sp.csc_matrix(local.matrix), diag_pivot_thresh=0.0,
                                   permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
                except RuntimeError as exc:
                    raise SingularSystemError(
                        f"subdomain {sub.id} is not SPD; cannot match impedances") from exc
                if float(lu.U.diagonal().min()) <= 0.0:
                    raise SingularSystemError(
                        f"subdomain {sub.id} is not SPD; cannot match impedances")
                for v in local.port_vertices:
                    e = np.zeros(local.dim)
                    e[v] = 1.0
                    values[v] = float(lu.solve(e)[v])
        r_in.append(values)

    by_vtl: dict[str, float] = {}
    for line in s.vtls:
        sub_a, port_a = line.end_a
        sub_b, port_b = line.end_b
        va = s.subdomains[sub_a].ports[port_a].local_index
        vb = s.subdomains[sub_b].ports[port_b].local_index
        ra = r_in[sub_a][va]
        rb = r_in[sub_b][vb]
        if policy == "side_a":
            by_vtl[line.id] = ra
        elif policy == "side_b":
            by_vtl[line.id] = rb
        else:
            by_vtl[line.id] = (ra + rb) / 2.0
    return ImpedanceAssignment(by_vtl=by_vtl)


def write_impedances(assignment: ImpedanceAssignment, path: str) -> None:
    if assignment.coupled:
        raise MalformedInputError("only per-line impedances serialize to the key-value file")
    assert assignment.by_vtl is not None
    with open(path, "w") as fh:
        for key in sorted(assignment.by_vtl):
            fh.write(f"{key} = {format_float(assignment.by_vtl[key])}\n")


def read_impedances(path: str) -> ImpedanceAssignment:
    by_vtl: dict[str, float] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            by_vtl[key.strip()] = float(value.strip())
    return ImpedanceAssignment(by_vtl=by_vtl)
