"""Boundary operator assembly, iteration matrix, certification, fixed point."""

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import eig_classify, random_dd_system, random_split_case
from vtm.analysis import (GlobalBoundaryOperator, build_global_operator, certify_convergence,
                          direct_solve, fixed_point_check, iteration_matrix, spectral_radius)
from vtm.core_graph import SparseSymmetricSystem, classify_definiteness, system_to_graph
from vtm.errors import FactorizationError, MalformedInputError, VtmError
from vtm.local_solver import ImpedanceAssignment, match_impedances
from vtm.partitioner import EdgeSplit, PartitionScheme, VertexSplit, split
from vtm.testbench import GridSpec, grid_partition, grid_system


@pytest.fixture
def demo_split(demo_case):
    return demo_case.split_system()


@pytest.fixture
def demo_operator(demo_split, demo_case):
    return build_global_operator(demo_split, demo_case.impedances)


def test_direct_solve_identity():
    sys = SparseSymmetricSystem.make(3, [(i, i, 1.0) for i in range(3)], [2.0, -1.0, 0.5])
    assert np.array_equal(direct_solve(sys), [2.0, -1.0, 0.5])


def test_direct_solve_diagonal():
    sys = SparseSymmetricSystem.make(3, [(0, 0, 2.0), (1, 1, 4.0), (2, 2, 8.0)],
                                     [2.0, 2.0, 2.0])
    assert direct_solve(sys) == pytest.approx([1.0, 0.5, 0.25], rel=1e-14)


def test_direct_solve_residual(six_system):
    x = direct_solve(six_system)
    resid = np.abs(six_system.to_dense() @ x - six_system.rhs_array()).max()
    assert resid <= 1e-10 * np.abs(six_system.rhs_array()).max()


def test_direct_solve_rejects_indefinite():
    sys = SparseSymmetricSystem.make(2, [(0, 0, 1.0), (1, 1, -1.0)], [1.0, 1.0])
    with pytest.raises(FactorizationError):
        direct_solve(sys)


def test_operator_blocks_match_independent_dense_algebra(demo_operator):
    """Recompute S from the published split matrices with raw numpy."""
    c_se = np.array([[4.8, -0.9], [-0.9, 3.5]])
    c_ju = np.array([[3.2, -1.1], [-1.1, 5.5]])
    e_se = np.array([[-2.0, 0, 0, 0], [0, -1.0, 0, 0]])
    e_ju = np.array([[0, 0, -1.0, 0], [0, 0, 0, -3.0]])
    d = np.array([[6.0, -1, 0, 0], [-1, 7.0, 0, 0], [0, 0, 10.0, -5], [0, 0, -5, 11.0]])
    e = np.vstack([e_se, e_ju])
    s_expected = np.block([[c_se, np.zeros((2, 2))], [np.zeros((2, 2)), c_ju]]) \
        - e @ np.linalg.solve(d, e.T)
    assert demo_operator.S == pytest.approx(s_expected, rel=1e-13)
    assert demo_operator.S.shape == (4, 4)
    assert np.array_equal(demo_operator.M, np.diag([1.0, 0.5, 1.0, 0.5]))
    beta_expected = np.concatenate([
        np.array([1.6, 1.8]) - e_se @ np.linalg.solve(d, [1.0, 2, 5, 6]),
        np.array([1.4, 2.2]) - e_ju @ np.linalg.solve(d, [1.0, 2, 5, 6])])
    assert demo_operator.beta == pytest.approx(beta_expected, rel=1e-13)


def test_operator_conservation(demo_operator, six_system):
    """Senior and junior blocks sum back to the original boundary blocks."""
    a = six_system.to_dense()
    bnd = list(demo_operator.boundary)
    inner = list(demo_operator.blocks["inner_parents"])
    assert demo_operator.blocks["C_se"] + demo_operator.blocks["C_ju"] == pytest.approx(
        a[np.ix_(bnd, bnd)], abs=0.0)
    assert demo_operator.blocks["E_se"] + demo_operator.blocks["E_ju"] == pytest.approx(
        a[np.ix_(bnd, inner)], abs=0.0)
    assert demo_operator.blocks["f_se"] + demo_operator.blocks["f_ju"] == pytest.approx(
        np.array(six_system.rhs)[bnd], abs=0.0)


def test_operator_without_inner_vertices(six_graph):
    splits = {v: VertexSplit(sides=(0, 1), weights=(w / 2, w / 2), sources=(s / 2, s / 2))
              for v, w, s in six_graph.vertices}
    edge_splits = {(i, j): EdgeSplit(sides=(0, 1), weights=(w / 2, w / 2))
                   for i, j, w in six_graph.edges}
    s = split(six_graph, PartitionScheme(assignment={}, splits=splits,
                                         edge_splits=edge_splits))
    op = build_global_operator(s, ImpedanceAssignment.constant(s, 1.0))
    half = s.source.to_dense() / 2
    assert op.S == pytest.approx(np.block([
        [half, np.zeros((6, 6))], [np.zeros((6, 6)), half]]), abs=0.0)


def test_reordered_matrix_is_permuted_block_diagonal(demo_split, demo_operator):
    """The (senior, junior, inner) matrix is exactly a symmetric permutation
    of the per-subdomain block diagonal."""
    blockdiag = sp.block_diag(
        [sub.system().to_csr() for sub in demo_split.subdomains]).toarray()
    perm = demo_operator.permutation
    assert np.array_equal(demo_operator.abar.toarray(), blockdiag[np.ix_(perm, perm)])


def test_reordering_property_on_random_cases():
    rng = np.random.default_rng(17)
    for _ in range(15):
        graph, scheme = random_split_case(rng, int(rng.integers(6, 16)),
                                          nsub=int(rng.integers(2, 4)))
        s = split(graph, scheme)
        op = build_global_operator(s, ImpedanceAssignment.constant(s, 1.0))
        blockdiag = sp.block_diag(
            [sub.system().to_csr() for sub in s.subdomains]).toarray()
        perm = op.permutation
        assert np.array_equal(op.abar.toarray(), blockdiag[np.ix_(perm, perm)])


def test_level2_split_rejected():
    spec = GridSpec(side=8, blocks=(2, 2))
    _, scheme = grid_partition(spec)
    s = split(grid_system(spec), scheme)
    with pytest.raises(VtmError):
        build_global_operator(s, ImpedanceAssignment.constant(s, 1.0))


def test_iteration_matrix_unit_case():
    eye = np.eye(4)
    j = np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    op = GlobalBoundaryOperator(boundary=(0, 1), S=eye, M=eye, J=j,
                                beta=np.zeros(4), abar=sp.csr_matrix((4, 4)),
                                bbar=np.zeros(4), permutation=np.arange(4), blocks={})
    assert np.array_equal(iteration_matrix(op), np.zeros((4, 4)))


def test_demo_spectral_radius_below_one(demo_operator):
    p = iteration_matrix(demo_operator)
    rho = spectral_radius(p)
    assert 0.0 < rho < 1.0
    # independent eigenvalue oracle
    assert rho == pytest.approx(np.abs(np.linalg.eigvals(p)).max(), rel=1e-12)


def test_impedance_scaling_keeps_contraction(demo_split, demo_case):
    for t in (0.1, 1.0, 10.0):
        scaled = ImpedanceAssignment(
            by_vtl={k: t * v for k, v in demo_case.impedances.by_vtl.items()})
        op = build_global_operator(demo_split, scaled)
        assert spectral_radius(iteration_matrix(op)) < 1.0


def test_certify_demo(demo_operator):
    result = certify_convergence(demo_operator)
    assert result.certified
    assert result.rho < 1.0 - result.cert_margin
    assert result.symmetrized_min_eig > 0.0
    assert result.exchange_residual <= 1e-12
    text = result.to_text()
    assert "rho = " in text and "certified = true" in text


def test_certify_grid_strips_matched():
    spec = GridSpec(side=17, strips=2)
    _, scheme = grid_partition(spec)
    s = split(grid_system(spec), scheme)
    result = certify_convergence(build_global_operator(s, match_impedances(s)))
    assert result.certified


def test_negative_impedance_rejected_upstream(demo_split):
    bad = ImpedanceAssignment(by_vtl={"v2": -1.0, "v3": 0.5})
    with pytest.raises(MalformedInputError):
        build_global_operator(demo_split, bad)


def test_exchange_identities(demo_operator):
    j, m = demo_operator.J, demo_operator.M
    assert np.array_equal(j @ j, np.eye(4))
    assert np.array_equal(j @ m, m @ j)


def test_schur_spd_when_subdomains_spd():
    rng = np.random.default_rng(29)
    for _ in range(20):
        graph, scheme = random_split_case(rng, int(rng.integers(6, 16)))
        s = split(graph, scheme)
        for sub in s.subdomains:
            assert classify_definiteness(sub.system()) == "spd"
        op = build_global_operator(s, ImpedanceAssignment.constant(s, 1.0))
        assert classify_definiteness(op.S) == "spd"
        assert eig_classify(op.S) == "spd"


def test_symmetrized_spectrum_positive(demo_operator):
    sqrt_m = np.diag(np.sqrt(np.diag(demo_operator.M)))
    sym = sqrt_m @ demo_operator.S @ sqrt_m
    assert np.linalg.eigvalsh(sym).min() > 0.0


def test_spectral_radius_below_one_randomized():
    """Conformal twin splits with SPD impedances always contract."""
    rng = np.random.default_rng(101)
    for _ in range(200):
        graph, scheme = random_split_case(rng, int(rng.integers(5, 21)),
                                          nsub=int(rng.integers(2, 4)))
        s = split(graph, scheme)
        z = ImpedanceAssignment(
            by_vtl={line.id: float(rng.uniform(0.05, 20.0)) for line in s.vtls})
        op = build_global_operator(s, z)
        assert spectral_radius(iteration_matrix(op)) < 1.0


def test_operator_keeps_senior_junior_cross_coupling():
    """Three subdomains along a chain: adjacent boundary vertices can pair a
    senior child with a junior child; S must keep that entry and still match
    a from-scratch Schur complement of the reordered matrix."""
    rng = np.random.default_rng(77)
    for _ in range(10):
        graph, scheme = random_split_case(rng, 14, nsub=3)
        s = split(graph, scheme)
        op = build_global_operator(s, ImpedanceAssignment.constant(s, 1.0))
        m = len(op.boundary)
        abar = op.abar.toarray()
        bb = abar[:2 * m, :2 * m]
        e = abar[:2 * m, 2 * m:]
        d = abar[2 * m:, 2 * m:]
        s_expected = bb - e @ np.linalg.solve(d, e.T)
        assert op.S == pytest.approx(s_expected, rel=1e-12, abs=1e-12)
        # reversibility with the cross blocks folded in
        a = s.source.to_dense()
        bnd = list(op.boundary)
        recon = (op.blocks["C_se"] + op.blocks["C_ju"]
                 + op.blocks["C_cross"] + op.blocks["C_cross"].T)
        assert recon == pytest.approx(a[np.ix_(bnd, bnd)], abs=1e-13)


def test_demo_operator_has_no_cross_coupling(demo_operator):
    assert np.abs(demo_operator.blocks["C_cross"]).max() == 0.0


def test_coupled_impedance_certification(demo_split):
    """A shared SPD impedance block on both sides certifies (coupled lines)."""
    z_cut = np.array([[0.4, 0.1], [0.1, 0.35]])
    coupled = ImpedanceAssignment(by_subdomain={0: z_cut, 1: z_cut})
    op = build_global_operator(demo_split, coupled)
    assert np.array_equal(op.M[:2, :2], z_cut)
    assert np.array_equal(op.M[2:, 2:], z_cut)
    assert np.abs(op.M[:2, 2:]).max() == 0.0
    result = certify_convergence(op)
    assert result.certified
    # the coupled run reaches the same fixed point
    from vtm.runtime import RunConfig, run_vtm
    x_star = direct_solve(demo_split.source)
    report = run_vtm(demo_split, coupled, RunConfig(epsilon=1e-12, max_iter=500))
    assert report.converged
    assert np.abs(report.x - x_star).max() <= 1e-9


def test_coupled_impedance_mismatch_rejected(demo_split):
    za = np.array([[0.4, 0.1], [0.1, 0.35]])
    zb = np.array([[0.5, 0.0], [0.0, 0.3]])
    with pytest.raises(VtmError):
        build_global_operator(demo_split, ImpedanceAssignment(by_subdomain={0: za, 1: zb}))


def test_fixed_point_matches_oracle(demo_operator, demo_split):
    x_star = direct_solve(demo_split.source)
    result = fixed_point_check(demo_operator, demo_operator.beta, x_star)
    assert result.passed
    assert result.se_ju_gap <= 1e-9
    assert result.boundary_potentials == pytest.approx(x_star[[2, 3]], abs=1e-9)


def test_fixed_point_empty_boundary_is_vacuous(six_graph):
    scheme = PartitionScheme(assignment={v: 0 for v in range(6)}, splits={},
                             edge_splits={})
    s = split(six_graph, scheme)
    op = build_global_operator(s, ImpedanceAssignment(by_vtl={}))
    result = fixed_point_check(op, op.beta, np.zeros(6))
    assert result.passed


def test_fixed_point_random_conformal_case():
    rng = np.random.default_rng(55)
    graph, scheme = random_split_case(rng, 12)
    s = split(graph, scheme)
    x_star = direct_solve(s.source)
    op = build_global_operator(s, ImpedanceAssignment.constant(s, 0.7))
    result = fixed_point_check(op, op.beta, x_star)
    assert result.passed


def test_empirical_contraction_matches_rho(demo_split, demo_case, demo_operator):
    """Late-iteration boundary-change decay approaches the spectral radius."""
    from vtm.runtime import RunConfig, run_vtm
    rho = spectral_radius(iteration_matrix(demo_operator))
    report = run_vtm(demo_split, demo_case.impedances,
                     RunConfig(epsilon=1e-300, max_iter=45))
    deltas = [r.max_boundary_delta for r in report.records]
    k1, k2 = 25, 44
    rate = (deltas[k2] / deltas[k1]) ** (1.0 / (k2 - k1))
    assert rate == pytest.approx(rho, rel=0.1)


def test_empirical_contraction_matches_rho_on_grids():
    from vtm.runtime import RunConfig, run_vtm
    for side, p in ((9, 2), (9, 3)):
        spec = GridSpec(side=side, sigma=1.0, strips=p)
        _, scheme = grid_partition(spec)
        s = split(grid_system(spec), scheme)
        z = match_impedances(s)
        rho = spectral_radius(iteration_matrix(build_global_operator(s, z)))
        report = run_vtm(s, z, RunConfig(epsilon=1e-300, max_iter=400))
        deltas = np.array([r.max_boundary_delta for r in report.records])
        # geometric fit over the asymptotic stretch above the round-off floor
        idx = np.where(deltas > max(deltas.min() * 1e3, 1e-13))[0]
        k2 = idx[-1]
        k1 = max(k2 - 30, k2 // 2)
        rate = (deltas[k2] / deltas[k1]) ** (1.0 / (k2 - k1))
        assert rate == pytest.approx(rho, rel=0.1)


def test_boundary_cap_enforced():
    rng = np.random.default_rng(1)
    sys = random_dd_system(rng, 8)
    graph = system_to_graph(sys)
    from vtm.analysis import MAX_BOUNDARY_OPERATOR
    assert MAX_BOUNDARY_OPERATOR == 2000  # documented diagnostic cap
