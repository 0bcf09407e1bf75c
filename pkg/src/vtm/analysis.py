"""Convergence certification machinery.

For a twin (level-one) split, reordering the torn unknowns as (senior
children, junior children, inner) gives a global system whose boundary
behavior, after eliminating the inner block, is governed by a symmetric
operator S.  With the impedance block M = diag(Z, Z) and the half-swap
matrix J, the boundary potentials evolve linearly:

    u^k = P u^{k-1} + gamma,     P = (I + M S)^{-1} J (I - M S)

so the iteration contracts exactly when the spectral radius of P is below
one.  This module builds S, M, J and P from a split system, certifies the
contraction, and provides the direct-solve oracle used for error tracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from vtm.core_graph import SparseSymmetricSystem, classify_definiteness, format_float
from vtm.errors import FactorizationError, SingularSystemError, VtmError
from vtm.local_solver import ImpedanceAssignment
from vtm.partitioner import SplitSystem

_DENSE_SOLVE_LIMIT = 1500
_RESIDUAL_TOL = 1e-10

# dense boundary-operator work is a diagnostic; cap its size
MAX_BOUNDARY_OPERATOR = 2000

CERT_MARGIN = 1e-10


def direct_solve(sys: SparseSymmetricSystem) -> np.ndarray:
    """Factorize-and-solve oracle; rejects non-SPD input, verifies the residual."""
    if classify_definiteness(sys) != "spd":
        raise FactorizationError("direct_solve requires an SPD system")
    b = sys.rhs_array()
    if sys.dim <= _DENSE_SOLVE_LIMIT:
        dense = sys.to_dense()
        cf = la.cho_factor(dense, lower=True)
        x = la.cho_solve(cf, b)
        resid = np.abs(dense @ x - b).max()
        if resid > _RESIDUAL_TOL * max(np.abs(b).max(), 1e-300):
            x = x + la.cho_solve(cf, b - dense @ x)
            resid = np.abs(dense @ x - b).max()
    else:
        csc = sp.csc_matrix(sys.to_csr())
        lu = spla.splu(csc, diag_pivot_thresh=0.0, permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True))
        x = lu.solve(b)
        resid = np.abs(csc @ x - b).max()
        if resid > _RESIDUAL_TOL * max(np.abs(b).max(), 1e-300):
            x = x + lu.solve(b - csc @ x)
            resid = np.abs(csc @ x - b).max()
    if resid > _RESIDUAL_TOL * max(np.abs(b).max(), 1e-300):
        raise VtmError(f"direct solve residual {resid:.3e} exceeds tolerance")
    return x


@dataclass(frozen=True)
class GlobalBoundaryOperator:
    """Boundary-variable operator of a twin split, ordered (senior, junior).

    S is the 2m x 2m symmetric boundary operator, M the SPD impedance block
    diag(Z, Z), J the half-swap permutation.  beta is the boundary source
    term after inner elimination.  The reordered global matrix and the
    permutation taking the per-subdomain block-diagonal ordering into the
    (senior, junior, inner) ordering are kept for verification.
    """

    boundary: tuple[int, ...]
    S: np.ndarray
    M: np.ndarray
    J: np.ndarray
    beta: np.ndarray
    abar: sp.csr_matrix
    bbar: np.ndarray
    permutation: np.ndarray
    blocks: dict


def build_global_operator(s: SplitSystem, Z: ImpedanceAssignment) -> GlobalBoundaryOperator:
    """Assemble the reordered global system and eliminate the inner block."""
    if any(vs.level != 1 for vs in s.scheme.splits.values()):
        raise VtmError("the boundary operator supports twin (level-one) splits only")
    boundary = s.boundary_parents
    m = len(boundary)
    if 2 * m > MAX_BOUNDARY_OPERATOR:
        raise VtmError(
            f"boundary size 2*{m} exceeds the dense certification cap "
            f"{MAX_BOUNDARY_OPERATOR}")
    b_pos = {v: k for k, v in enumerate(boundary)}
    inner_parents = sorted(s.scheme.assignment)
    i_pos = {v: k for k, v in enumerate(inner_parents)}
    ni = len(inner_parents)
    dim = 2 * m + ni

    # slot of each (subdomain, local vertex) in the (senior, junior, inner) order
    slot: list[np.ndarray] = []
    offsets = []
    off = 0
    for sub in s.subdomains:
        offsets.append(off)
        off += sub.dim
        rows = np.empty(sub.dim, dtype=int)
        for i, parent in enumerate(sub.parents):
            if parent in b_pos:
                senior_side = s.scheme.splits[parent].sides[0]
                rows[i] = b_pos[parent] if sub.id == senior_side else m + b_pos[parent]
            else:
                rows[i] = 2 * m + i_pos[parent]
        slot.append(rows)
    total = off
    if dim != total:
        raise VtmError("slot accounting mismatch while reordering the split system")

    permutation = np.empty(dim, dtype=int)
    abar = sp.lil_matrix((dim, dim))
    bbar = np.zeros(dim)
    for sub, rows, off_j in zip(s.subdomains, slot, offsets):
        permutation[rows] = off_j + np.arange(sub.dim)
        local = sub.system()
        bbar[rows] = local.rhs_array()
        for i, j, v in local.entries:
            abar[rows[i], rows[j]] += v
            if i != j:
                abar[rows[j], rows[i]] += v
    abar = abar.tocsr()

    se = np.arange(m)
    ju = np.arange(m, 2 * m)
    inn = np.arange(2 * m, dim)
    dense_bnd = abar[:2 * m, :].toarray()
    boundary_block = dense_bnd[:, :2 * m]
    C_se = dense_bnd[np.ix_(se, se)]
    C_ju = dense_bnd[np.ix_(ju, ju)]
    # boundary-boundary edges may couple a senior child of one vertex with a
    # junior child of another (three or more subdomains meeting along a cut);
    # the Schur complement must keep that coupling
    C_cross = dense_bnd[np.ix_(se, ju)]
    E_se = dense_bnd[np.ix_(se, inn)]
    E_ju = dense_bnd[np.ix_(ju, inn)]
    E = np.vstack([E_se, E_ju])
    D = sp.csc_matrix(abar[np.ix_(inn, inn)])
    f_se = bbar[se]
    f_ju = bbar[ju]
    g = bbar[inn]

    if ni:
        try:
            if ni <= _DENSE_SOLVE_LIMIT:
                lu_d = la.lu_factor(D.toarray())
                W = la.lu_solve(lu_d, E.T)
                dg = la.lu_solve(lu_d, g)
            else:
                lu_s = spla.splu(D)
                W = np.column_stack([lu_s.solve(E[k, :]) for k in range(2 * m)])
                dg = lu_s.solve(g)
        except (la.LinAlgError, RuntimeError) as exc:
            raise SingularSystemError(f"inner block is singular: {exc}") from exc
        if not np.isfinite(W).all() or not np.isfinite(dg).all():
            raise SingularSystemError("inner block is singular")
        S = boundary_block - E @ W
        beta = np.concatenate([f_se, f_ju]) - E @ dg
    else:
        S = boundary_block.copy()
        beta = np.concatenate([f_se, f_ju])
    asym = float(np.abs(S - S.T).max(initial=0.0))
    if asym > 1e-8 * max(1.0, float(np.abs(S).max(initial=0.0))):
        raise VtmError(f"boundary operator lost symmetry ({asym:.3e})")
    S = 0.5 * (S + S.T)

    M = _impedance_block(s, Z, boundary, m)
    J = np.block([[np.zeros((m, m)), np.eye(m)], [np.eye(m), np.zeros((m, m))]])
    blocks = dict(C_se=C_se, C_ju=C_ju, C_cross=C_cross, E_se=E_se, E_ju=E_ju, D=D,
                  f_se=f_se, f_ju=f_ju, g=g, inner_parents=tuple(inner_parents))
    return GlobalBoundaryOperator(boundary=boundary, S=S, M=M, J=J, beta=beta,
                                  abar=abar, bbar=bbar, permutation=permutation,
                                  blocks=blocks)


def _impedance_block(s: SplitSystem, Z: ImpedanceAssignment,
                     boundary: tuple[int, ...], m: int) -> np.ndarray:
    if not Z.coupled:
        zs = Z.vtl_impedances(s)
        by_parent = {line.parent: zs[t] for t, line in enumerate(s.vtls)}
        zdiag = np.array([by_parent[v] for v in boundary])
        return np.diag(np.concatenate([zdiag, zdiag]))
    b_pos = {v: k for k, v in enumerate(boundary)}
    M = np.zeros((2 * m, 2 * m))
    for sub in s.subdomains:
        if not sub.ports:
            continue
        zmat = Z.local_matrix(s, sub.id).values
        slots = []
        for p in sub.ports:
            senior_side = s.scheme.splits[p.parent].sides[0]
            slots.append(b_pos[p.parent] if sub.id == senior_side else m + b_pos[p.parent])
        M[np.ix_(slots, slots)] = zmat
    if np.abs(M[:m, m:]).max(initial=0.0) != 0.0:
        raise VtmError(
            "coupled impedances mix senior and junior ports inside one subdomain; "
            "the block form diag(Z, Z) does not apply")
    if not np.array_equal(M[:m, :m], M[m:, m:]):
        raise VtmError("coupled impedances must agree on both sides of every line")
    return M


def iteration_matrix(op: GlobalBoundaryOperator) -> np.ndarray:
    """Dense boundary iteration matrix (I + M S)^-1 J (I - M S)."""
    ms = op.M @ op.S
    eye = np.eye(ms.shape[0])
    try:
        return la.solve(eye + ms, op.J @ (eye - ms))
    except la.LinAlgError as exc:
        raise FactorizationError(
            f"(I + M S) is singular; the configuration is not conformal: {exc}") from exc


def spectral_radius(p: np.ndarray) -> float:
    if p.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(p)).max())


def _sqrt_spd(mat: np.ndarray) -> np.ndarray:
    if np.array_equal(mat, np.diag(np.diag(mat))):
        return np.diag(np.sqrt(np.diag(mat)))
    w, q = np.linalg.eigh(mat)
    if w.size and w.min() <= 0.0:
        raise FactorizationError("impedance block is not SPD")
    return q @ np.diag(np.sqrt(w)) @ q.T


@dataclass(frozen=True)
class CertificationResult:
    rho: float
    certified: bool
    cert_margin: float
    boundary_size: int
    symmetrized_min_eig: float       # smallest eigenvalue of sqrt(M) S sqrt(M)
    exchange_residual: float         # max |sqrt(M)^-1 J sqrt(M) - J|
    lemma_ok: bool

    def to_text(self) -> str:
        lines = [
            f"rho = {format_float(self.rho)}",
            f"certified = {'true' if self.certified else 'false'}",
            f"cert_margin = {format_float(self.cert_margin)}",
            f"boundary_size = {self.boundary_size}",
            f"symmetrized_min_eig = {format_float(self.symmetrized_min_eig)}",
            f"exchange_residual = {format_float(self.exchange_residual)}",
            f"lemma_ok = {'true' if self.lemma_ok else 'false'}",
        ]
        return "\n".join(lines) + "\n"


def certify_convergence(op: GlobalBoundaryOperator) -> CertificationResult:
    """Spectral-radius certificate plus the supporting similarity checks."""
    p = iteration_matrix(op)
    rho = spectral_radius(p)
    size = op.S.shape[0]
    if size:
        sqrt_m = _sqrt_spd(op.M)
        sym = sqrt_m @ op.S @ sqrt_m
        sym = 0.5 * (sym + sym.T)
        min_eig = float(np.linalg.eigvalsh(sym).min())
        sqrt_m_inv = np.linalg.inv(sqrt_m)
        exchange_residual = float(np.abs(sqrt_m_inv @ op.J @ sqrt_m - op.J).max())
    else:
        min_eig = 0.0
        exchange_residual = 0.0
    scale = max(1.0, float(np.abs(op.S).max(initial=0.0)))
    lemma_ok = (min_eig > -1e-10 * scale) and (exchange_residual <= 1e-12)
    certified = bool(rho < 1.0 - CERT_MARGIN) and lemma_ok
    return CertificationResult(rho=rho, certified=certified, cert_margin=CERT_MARGIN,
                               boundary_size=size, symmetrized_min_eig=min_eig,
                               exchange_residual=exchange_residual, lemma_ok=lemma_ok)


@dataclass(frozen=True)
class FixedPointResult:
    se_ju_gap: float
    boundary_error: float
    passed: bool
    boundary_potentials: np.ndarray


def fixed_point_check(op: GlobalBoundaryOperator, beta: np.ndarray,
                      x_star: np.ndarray, tol: float = 1e-9) -> FixedPointResult:
    """Solve for the iteration's fixed point and compare against the oracle.

    The fixed point of u = P u + gamma must have equal senior/junior halves
    whose common value matches the oracle solution on the boundary vertices.
    """
    m = len(op.boundary)
    if m == 0:
        return FixedPointResult(se_ju_gap=0.0, boundary_error=0.0, passed=True,
                                boundary_potentials=np.zeros(0))
    p = iteration_matrix(op)
    gamma = la.solve(np.eye(2 * m) + op.M @ op.S, (op.J @ op.M + op.M) @ beta)
    try:
        uhat = la.solve(np.eye(2 * m) - p, gamma)
    except la.LinAlgError as exc:
        raise SingularSystemError(
            f"(I - P) is singular: the iteration does not contract (rho >= 1): {exc}") from exc
    u_se, u_ju = uhat[:m], uhat[m:]
    gap = float(np.abs(u_se - u_ju).max())
    merged = 0.5 * (u_se + u_ju)
    target = np.asarray(x_star, dtype=float)[list(op.boundary)]
    err = float(np.abs(merged - target).max())
    scale = max(1.0, float(np.abs(target).max(initial=0.0)))
    passed = gap <= tol * scale and err <= tol * scale
    return FixedPointResult(se_ju_gap=gap, boundary_error=err, passed=passed,
                            boundary_potentials=merged)


def write_certification(result: CertificationResult, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(result.to_text())
