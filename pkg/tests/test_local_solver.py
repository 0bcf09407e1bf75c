"""Assembly, preconditioning, the per-iteration update, impedance matching."""

import numpy as np
import pytest

from conftest import random_split_case
from vtm.analysis import direct_solve
from vtm.core_graph import ElectricGraph
from vtm.errors import FactorizationError, MalformedInputError, SingularSystemError
from vtm.local_solver import (ImpedanceAssignment, ImpedanceMatrix, VirtualTransmissionLine,
                              assemble, consistency_residuals, input_impedance, local_iterate,
                              match_impedances, precondition, read_impedances,
                              with_impedances, write_impedances)
from vtm.partitioner import PortRef, Subdomain, split

R_IN_PUBLISHED = {"3a": 0.2598, "4a": 0.3190, "3b": 0.3699, "4b": 0.2557}


@pytest.fixture
def demo_split(demo_case):
    return demo_case.split_system()


def test_assemble_published_blocks(demo_split):
    loc1 = assemble(demo_split.subdomains[0])
    assert np.array_equal(loc1.C, [[4.8, -0.9], [-0.9, 3.5]])
    assert np.array_equal(loc1.D, [[6.0, -1.0], [-1.0, 7.0]])
    assert np.array_equal(loc1.E, [[-2.0, 0.0], [0.0, -1.0]])
    assert np.array_equal(loc1.F, loc1.E.T)
    assert np.array_equal(loc1.f, [1.6, 1.8])
    assert np.array_equal(loc1.g, [1.0, 2.0])
    loc2 = assemble(demo_split.subdomains[1])
    assert np.array_equal(loc2.C, [[3.2, -1.1], [-1.1, 5.5]])
    assert np.array_equal(loc2.D, [[10.0, -5.0], [-5.0, 11.0]])
    assert np.array_equal(loc2.f, [1.4, 2.2])
    assert np.array_equal(loc2.g, [5.0, 6.0])


def test_assemble_portless_subdomain(six_graph):
    from vtm.partitioner import PartitionScheme
    scheme = PartitionScheme(assignment={v: 0 for v in range(6)}, splits={}, edge_splits={})
    s = split(six_graph, scheme)
    loc = assemble(s.subdomains[0])
    assert loc.C.shape == (0, 0)
    assert loc.D.shape == (6, 6)
    assert np.array_equal(loc.D, s.source.to_dense())


def test_precondition_published_diagonals(demo_split, demo_case):
    z0 = demo_case.impedances.local_matrix(demo_split, 0)
    fac0 = precondition(assemble(demo_split.subdomains[0]), z0)
    # the factored matrix is not exposed; verify through a solve against the
    # published augmented matrix
    m1 = np.array([[6, -1, -2, 0], [-1, 7, 0, -1], [-2, 0, 5.8, -0.9], [0, -1, -0.9, 5.5]])
    rhs = np.array([0.3, -1.2, 2.0, 0.7])
    assert fac0.factor.solve(rhs) == pytest.approx(np.linalg.solve(m1, rhs), rel=1e-12)
    z1 = demo_case.impedances.local_matrix(demo_split, 1)
    fac1 = precondition(assemble(demo_split.subdomains[1]), z1)
    m2 = np.array([[4.2, -1.1, -1, 0], [-1.1, 7.5, 0, -3], [-1, 0, 10, -5], [0, -3, -5, 11]])
    assert fac1.factor.solve(rhs) == pytest.approx(np.linalg.solve(m2, rhs), rel=1e-12)


def test_precondition_identity_on_semidefinite_block():
    # a singular (semidefinite) one-port system becomes SPD once 1/z is added
    graph = ElectricGraph(vertices=((0, 1.0, 0.0), (1, 1.0, 0.0)), edges=((0, 1, -1.0),))
    sub = Subdomain(id=0, graph=graph, parents=(0, 1),
                    ports=(PortRef(local_index=0, parent=0, twin_subdomain=1,
                                   twin_port=0, vtl_index=0),),
                    inner=(1,))
    loc = assemble(sub)
    fac = precondition(loc, ImpedanceMatrix(kind="diagonal", values=np.array([1.0])))
    out = local_iterate(fac, loc.f, loc.g, (np.zeros(1), np.zeros(1)))
    assert np.isfinite(out.x_local).all()


def test_precondition_failure_reports_not_spd():
    graph = ElectricGraph(vertices=((0, -5.0, 0.0), (1, 1.0, 0.0)), edges=((0, 1, -1.0),))
    sub = Subdomain(id=0, graph=graph, parents=(0, 1),
                    ports=(PortRef(local_index=0, parent=0, twin_subdomain=1,
                                   twin_port=0, vtl_index=0),),
                    inner=(1,))
    loc = assemble(sub)
    with pytest.raises(FactorizationError):
        precondition(loc, ImpedanceMatrix(kind="diagonal", values=np.array([1.0])))


def test_local_iterate_zero_incoming_matches_direct_solve(demo_split, demo_case):
    loc = assemble(demo_split.subdomains[0])
    fac = precondition(loc, demo_case.impedances.local_matrix(demo_split, 0))
    out = local_iterate(fac, loc.f, loc.g, (np.zeros(2), np.zeros(2)))
    m1 = np.array([[6, -1, -2, 0], [-1, 7, 0, -1], [-2, 0, 5.8, -0.9], [0, -1, -0.9, 5.5]])
    expected = np.linalg.solve(m1, np.array([1.0, 2.0, 1.6, 1.8]))
    assert out.x_local == pytest.approx(expected, rel=1e-13)
    assert out.u == pytest.approx(expected[2:], rel=1e-13)
    block_res, line_res = consistency_residuals(fac, loc.f, loc.g,
                                                (np.zeros(2), np.zeros(2)), out)
    assert block_res <= 1e-10
    assert line_res <= 1e-12


def test_local_iterate_fixed_point(demo_split, demo_case):
    x_star = direct_solve(demo_split.source)
    a1 = demo_split.subdomains[0].system().to_dense()
    b1 = demo_split.subdomains[0].system().rhs_array()
    x1_star = np.array([x_star[p] for p in demo_split.subdomains[0].parents])
    omega_star = (a1 @ x1_star - b1)[2:]  # port rows
    u_star = x1_star[2:]
    loc = assemble(demo_split.subdomains[0])
    fac = precondition(loc, demo_case.impedances.local_matrix(demo_split, 0))
    out = local_iterate(fac, loc.f, loc.g, (u_star, -omega_star))
    assert out.u == pytest.approx(u_star, abs=1e-12)
    assert out.omega == pytest.approx(omega_star, abs=1e-12)
    assert out.x_local == pytest.approx(x1_star, abs=1e-12)


def test_local_iterate_single_port_scalar():
    graph = ElectricGraph(vertices=((0, 2.0, 0.0),), edges=())
    sub = Subdomain(id=0, graph=graph, parents=(0,),
                    ports=(PortRef(local_index=0, parent=0, twin_subdomain=1,
                                   twin_port=0, vtl_index=0),),
                    inner=())
    loc = assemble(sub)
    fac = precondition(loc, ImpedanceMatrix(kind="diagonal", values=np.array([1.0])))
    out = local_iterate(fac, loc.f, loc.g, (np.array([1.0]), np.array([0.0])))
    assert out.u == pytest.approx([1.0 / 3.0], rel=1e-15)
    assert out.omega == pytest.approx([2.0 / 3.0], rel=1e-15)


def test_input_impedance_published_values(demo_split):
    loc1 = assemble(demo_split.subdomains[0])
    loc2 = assemble(demo_split.subdomains[1])
    assert input_impedance(loc1, 0) == pytest.approx(R_IN_PUBLISHED["3a"], abs=5e-4)
    assert input_impedance(loc1, 1) == pytest.approx(R_IN_PUBLISHED["4a"], abs=5e-4)
    assert input_impedance(loc2, 0) == pytest.approx(R_IN_PUBLISHED["3b"], abs=5e-4)
    assert input_impedance(loc2, 1) == pytest.approx(R_IN_PUBLISHED["4b"], abs=5e-4)


def test_input_impedance_scalar_inverse():
    graph = ElectricGraph(vertices=((0, 4.0, 0.0),), edges=())
    sub = Subdomain(id=0, graph=graph, parents=(0,),
                    ports=(PortRef(local_index=0, parent=0, twin_subdomain=1,
                                   twin_port=0, vtl_index=0),),
                    inner=())
    assert input_impedance(assemble(sub), 0) == pytest.approx(0.25, rel=1e-15)


def test_input_impedance_singular_errors():
    graph = ElectricGraph(vertices=((0, 1.0, 0.0), (1, 1.0, 0.0)), edges=((0, 1, -1.0),))
    sub = Subdomain(id=0, graph=graph, parents=(0, 1),
                    ports=(PortRef(local_index=0, parent=0, twin_subdomain=1,
                                   twin_port=0, vtl_index=0),),
                    inner=(1,))
    with pytest.raises(SingularSystemError):
        input_impedance(assemble(sub), 0)


def test_input_impedance_positive_for_spd_subdomains():
    rng = np.random.default_rng(13)
    for _ in range(10):
        graph, scheme = random_split_case(rng, 10)
        s = split(graph, scheme)
        for sub in s.subdomains:
            loc = assemble(sub)
            for t in range(len(loc.ports)):
                assert input_impedance(loc, t) > 0.0


def test_match_impedances_policies(demo_split):
    mean = match_impedances(demo_split, policy="mean")
    side_a = match_impedances(demo_split, policy="side_a")
    side_b = match_impedances(demo_split, policy="side_b")
    loc1 = assemble(demo_split.subdomains[0])
    loc2 = assemble(demo_split.subdomains[1])
    r3a, r4a = input_impedance(loc1, 0), input_impedance(loc1, 1)
    r3b, r4b = input_impedance(loc2, 0), input_impedance(loc2, 1)
    assert mean.by_vtl["v2"] == pytest.approx((r3a + r3b) / 2, rel=1e-14)
    assert mean.by_vtl["v3"] == pytest.approx((r4a + r4b) / 2, rel=1e-14)
    assert side_a.by_vtl["v2"] == pytest.approx(R_IN_PUBLISHED["3a"], abs=5e-4)
    assert side_a.by_vtl["v3"] == pytest.approx(R_IN_PUBLISHED["4a"], abs=5e-4)
    assert side_b.by_vtl["v2"] == pytest.approx(R_IN_PUBLISHED["3b"], abs=5e-4)


def test_match_policies_agree_on_symmetric_split(six_graph):
    # half/half split of the whole graph: the twin subdomains are identical
    from vtm.partitioner import EdgeSplit, PartitionScheme, VertexSplit
    splits = {v: VertexSplit(sides=(0, 1), weights=(w / 2, w / 2), sources=(s / 2, s / 2))
              for v, w, s in six_graph.vertices}
    edge_splits = {(i, j): EdgeSplit(sides=(0, 1), weights=(w / 2, w / 2))
                   for i, j, w in six_graph.edges}
    s = split(six_graph, PartitionScheme(assignment={}, splits=splits,
                                         edge_splits=edge_splits))
    pa = match_impedances(s, policy="side_a")
    pb = match_impedances(s, policy="side_b")
    pm = match_impedances(s, policy="mean")
    assert pa.by_vtl == pb.by_vtl == pm.by_vtl


def test_line_validation():
    with pytest.raises(MalformedInputError):
        VirtualTransmissionLine(id="x", parent=0, end_a=(0, 0), end_b=(1, 0), z=-1.0)
    with pytest.raises(MalformedInputError):
        VirtualTransmissionLine(id="x", parent=0, end_a=(0, 0), end_b=(0, 1))
    with pytest.raises(MalformedInputError):
        VirtualTransmissionLine(id="x", parent=0, end_a=(0, 0), end_b=(1, 0), delay=2)


def test_impedance_matrix_validation():
    with pytest.raises(MalformedInputError):
        ImpedanceMatrix(kind="diagonal", values=np.array([1.0, -0.5]))
    with pytest.raises(MalformedInputError):
        ImpedanceMatrix(kind="full", values=np.array([[1.0, 2.0], [2.0, 1.0]]))  # indefinite
    ImpedanceMatrix(kind="full", values=np.array([[2.0, 0.5], [0.5, 1.0]]))


def test_impedance_consistency_across_endpoints(demo_split, demo_case):
    zs = demo_case.impedances.vtl_impedances(demo_split)
    for j in range(2):
        local = demo_case.impedances.local_matrix(demo_split, j)
        for t, p in enumerate(demo_split.subdomains[j].ports):
            assert local.values[t] == zs[p.vtl_index]


def test_coupled_impedance_round_trip(demo_split):
    z_cut = np.array([[0.4, 0.1], [0.1, 0.35]])
    coupled = ImpedanceAssignment(by_subdomain={0: z_cut, 1: z_cut})
    loc = assemble(demo_split.subdomains[0])
    fac = precondition(loc, coupled.local_matrix(demo_split, 0))
    out = local_iterate(fac, loc.f, loc.g, (np.zeros(2), np.zeros(2)))
    # independent dense check of the augmented system
    a1 = demo_split.subdomains[0].system().to_dense()
    zinv = np.linalg.inv(z_cut)
    aug = a1.copy()
    aug[2:, 2:] += zinv
    expected = np.linalg.solve(aug, np.array([1.0, 2.0, 1.6, 1.8]))
    assert out.x_local == pytest.approx(expected, rel=1e-12)


def test_impedance_file_round_trip(tmp_path, demo_split, demo_case):
    path = str(tmp_path / "z.txt")
    write_impedances(demo_case.impedances, path)
    again = read_impedances(path)
    assert again.by_vtl == {"v2": 1.0, "v3": 0.5}
    baked = with_impedances(demo_split, again)
    assert [line.z for line in baked.vtls] == [1.0, 0.5]


def test_matching_reduces_20_iteration_error(demo_split):
    from vtm.runtime import RunConfig, run_vtm
    x_star = direct_solve(demo_split.source)
    cfg = RunConfig(epsilon=1e-300, max_iter=20)

    def rms_after(assignment):
        report = run_vtm(demo_split, assignment, cfg, oracle=x_star)
        return report.records[-1].rms_error

    matched = match_impedances(demo_split, policy="mean")
    rms_matched = rms_after(matched)
    scaled_up = ImpedanceAssignment(by_vtl={k: 10 * v for k, v in matched.by_vtl.items()})
    scaled_down = ImpedanceAssignment(by_vtl={k: 0.1 * v for k, v in matched.by_vtl.items()})
    assert rms_matched < rms_after(scaled_up)
    assert rms_matched < rms_after(scaled_down)
