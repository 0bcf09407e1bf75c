"""Electric vertex splitting: tearing a graph into coupled subdomains.

Each boundary vertex is split into twin (or, for a four-way split, four
child) vertices, its weight and current source are shared among the sides,
and boundary-boundary edge weights are shared as well.  The disclosed
inflow currents at the children become the unknowns that virtual
transmission lines later couple.  Splitting is reversible: forcing equal
child potentials and opposite inflow currents recovers the original system.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from vtm.core_graph import (
    ElectricGraph,
    SparseSymmetricSystem,
    classify_definiteness,
    format_float,
    graph_to_system,
    system_to_graph,
    write_matrix,
    write_vector,
)
from vtm.errors import MalformedInputError, SchemeError
from vtm.local_solver import VirtualTransmissionLine

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class VertexSplit:
    """Share of one boundary vertex per side.

    sides lists the subdomains receiving a child vertex; two sides make a
    twin split, four sides a ring split (the list order is the ring order).
    weights/sources are absolute shares summing to the vertex weight and
    current source.
    """

    sides: tuple[int, ...]
    weights: tuple[float, ...]
    sources: tuple[float, ...]

    def __post_init__(self) -> None:
        k = len(self.sides)
        if k not in (2, 4):
            raise SchemeError(f"a vertex splits into 2 or 4 children, got {k} sides")
        if len(set(self.sides)) != k:
            raise SchemeError(f"split sides must be distinct subdomains, got {self.sides}")
        if len(self.weights) != k or len(self.sources) != k:
            raise SchemeError("weights/sources must have one entry per side")

    @property
    def level(self) -> int:
        return 1 if len(self.sides) == 2 else 2


@dataclass(frozen=True)
class EdgeSplit:
    """Per-side shares of one boundary-boundary edge weight."""

    sides: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.sides) != len(self.weights) or not self.sides:
            raise SchemeError("edge split needs one weight per side")
        if len(set(self.sides)) != len(self.sides):
            raise SchemeError("edge split sides must be distinct")


@dataclass(frozen=True)
class PartitionScheme:
    """Complete description of one way to tear a graph apart.

    assignment: inner vertex -> subdomain id.
    splits: boundary vertex -> VertexSplit.
    edge_splits: boundary-boundary edge (i, j), i < j -> EdgeSplit.
    """

    assignment: Mapping[int, int]
    splits: Mapping[int, VertexSplit]
    edge_splits: Mapping[tuple[int, int], EdgeSplit]

    @property
    def boundary(self) -> set[int]:
        return set(self.splits)

    @property
    def num_subdomains(self) -> int:
        ids = set(self.assignment.values())
        for vs in self.splits.values():
            ids.update(vs.sides)
        return len(ids)

    @property
    def split_level(self) -> int:
        return max((vs.level for vs in self.splits.values()), default=1)

    def subdomain_ids(self) -> list[int]:
        ids = set(self.assignment.values())
        for vs in self.splits.values():
            ids.update(vs.sides)
        return sorted(ids)

    def validate(self, g: ElectricGraph) -> None:
        n = g.dim
        inner = set(self.assignment)
        bnd = set(self.splits)
        if inner & bnd:
            raise SchemeError(f"vertices both inner and boundary: {sorted(inner & bnd)[:5]}")
        if inner | bnd != set(range(n)):
            missing = sorted(set(range(n)) - inner - bnd)
            raise SchemeError(f"vertices not covered by the scheme: {missing[:5]}")
        ids = self.subdomain_ids()
        if ids != list(range(len(ids))):
            raise SchemeError(f"subdomain ids must be 0..N-1, got {ids}")
        weights = {v: w for v, w, _ in g.vertices}
        sources = {v: s for v, _, s in g.vertices}
        for v, vs in self.splits.items():
            _check_sum(sum(vs.weights), weights[v], f"weight shares of vertex {v}")
            _check_sum(sum(vs.sources), sources[v], f"source shares of vertex {v}")
        seen_edges = set()
        for i, j, w in g.edges:
            i_b, j_b = i in bnd, j in bnd
            if not i_b and not j_b:
                if self.assignment[i] != self.assignment[j]:
                    raise SchemeError(
                        f"edge ({i}, {j}) crosses subdomains but neither endpoint is boundary")
            elif i_b and j_b:
                es = self.edge_splits.get((i, j))
                if es is None:
                    raise SchemeError(f"boundary-boundary edge ({i}, {j}) has no edge split")
                seen_edges.add((i, j))
                common = set(self.splits[i].sides) & set(self.splits[j].sides)
                bad = [s for s in es.sides if s not in common]
                if bad:
                    raise SchemeError(
                        f"edge ({i}, {j}) split assigns sides {bad} hosting only one endpoint")
                _check_sum(sum(es.weights), w, f"edge shares of ({i}, {j})")
            else:
                inner_v, bnd_v = (i, j) if j_b else (j, i)
                if self.assignment[inner_v] not in self.splits[bnd_v].sides:
                    raise SchemeError(
                        f"edge ({inner_v}, {bnd_v}): boundary vertex {bnd_v} has no child in "
                        f"subdomain {self.assignment[inner_v]}")
        stray = set(self.edge_splits) - seen_edges
        if stray:
            raise SchemeError(f"edge splits for non-existent edges: {sorted(stray)[:5]}")


def _check_sum(total: float, target: float, what: str) -> None:
    if abs(total - target) > _SUM_TOL * max(1.0, abs(target)):
        raise SchemeError(f"{what} sum to {total!r}, expected {target!r}")


@dataclass(frozen=True)
class PortRef:
    """One transmission-line attachment on a subdomain.

    local_index points into the subdomain's local vertex list; two port
    entries may share a local index when a four-way child carries two lines.
    """

    local_index: int
    parent: int
    twin_subdomain: int
    twin_port: int
    vtl_index: int


@dataclass(frozen=True)
class Subdomain:
    id: int
    graph: ElectricGraph
    parents: tuple[int, ...]
    ports: tuple[PortRef, ...]
    inner: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.graph.dim

    @property
    def port_vertices(self) -> tuple[int, ...]:
        """Unique local indices carrying ports, in port order."""
        seen: dict[int, None] = {}
        for p in self.ports:
            seen.setdefault(p.local_index, None)
        return tuple(seen)

    def system(self) -> SparseSymmetricSystem:
        return graph_to_system(self.graph)


@dataclass(frozen=True)
class SplitSystem:
    subdomains: tuple[Subdomain, ...]
    vtls: tuple[VirtualTransmissionLine, ...]
    scheme: PartitionScheme
    source: SparseSymmetricSystem

    @property
    def boundary_parents(self) -> tuple[int, ...]:
        return tuple(sorted(self.scheme.splits))

    def neighbors(self, sub_id: int) -> set[int]:
        out = set()
        for line in self.vtls:
            a, b = line.end_a[0], line.end_b[0]
            if a == sub_id:
                out.add(b)
            elif b == sub_id:
                out.add(a)
        return out


def split(g: ElectricGraph, scheme: PartitionScheme) -> SplitSystem:
    """Tear the graph into subdomains with twin ports and transmission lines."""
    scheme.validate(g)
    nsub = scheme.num_subdomains
    weights = {v: w for v, w, _ in g.vertices}
    sources = {v: s for v, _, s in g.vertices}

    # local vertex lists, ordered by original vertex id
    members: list[list[int]] = [[] for _ in range(nsub)]
    for v, s in scheme.assignment.items():
        members[s].append(v)
    side_of: dict[tuple[int, int], int] = {}
    for v, vs in scheme.splits.items():
        for pos, s in enumerate(vs.sides):
            members[s].append(v)
            side_of[(v, s)] = pos
    local_index: list[dict[int, int]] = []
    for j in range(nsub):
        members[j].sort()
        local_index.append({v: i for i, v in enumerate(members[j])})

    # local vertices: inner keep (weight, source); children take their shares
    loc_vertices: list[list[tuple[int, float, float]]] = [[] for _ in range(nsub)]
    for j in range(nsub):
        for i, v in enumerate(members[j]):
            if v in scheme.splits:
                vs = scheme.splits[v]
                pos = side_of[(v, j)]
                loc_vertices[j].append((i, vs.weights[pos], vs.sources[pos]))
            else:
                loc_vertices[j].append((i, weights[v], sources[v]))

    loc_edges: list[list[tuple[int, int, float]]] = [[] for _ in range(nsub)]

    def add_edge(j: int, u: int, v: int, w: float) -> None:
        if w == 0.0:
            return
        a, b = local_index[j][u], local_index[j][v]
        loc_edges[j].append((min(a, b), max(a, b), w))

    bnd = set(scheme.splits)
    for i, j, w in g.edges:
        if i not in bnd and j not in bnd:
            add_edge(scheme.assignment[i], i, j, w)
        elif i in bnd and j in bnd:
            es = scheme.edge_splits[(i, j)]
            for s, ws in zip(es.sides, es.weights):
                add_edge(s, i, j, ws)
        else:
            inner_v, bnd_v = (i, j) if j in bnd else (j, i)
            add_edge(scheme.assignment[inner_v], inner_v, bnd_v, w)

    # transmission lines in canonical order: by parent vertex, then ring slot
    vtl_specs: list[tuple[int, int, int, int, str]] = []
    for v in sorted(scheme.splits):
        vs = scheme.splits[v]
        if vs.level == 1:
            vtl_specs.append((v, 0, vs.sides[0], vs.sides[1], f"v{v}"))
        else:
            for r in range(4):
                vtl_specs.append((v, r, vs.sides[r], vs.sides[(r + 1) % 4], f"v{v}.{r}"))

    attach: list[list[tuple[int, int, str]]] = [[] for _ in range(nsub)]
    for t, (v, _r, sa, sb, _id) in enumerate(vtl_specs):
        attach[sa].append((v, t, "a"))
        attach[sb].append((v, t, "b"))
    for j in range(nsub):
        attach[j].sort()

    port_pos: dict[tuple[int, str], tuple[int, int]] = {}
    for j in range(nsub):
        for pi, (_v, t, end) in enumerate(attach[j]):
            port_pos[(t, end)] = (j, pi)

    subdomains = []
    for j in range(nsub):
        ports = []
        for _pi, (v, t, end) in enumerate(attach[j]):
            other = "b" if end == "a" else "a"
            tw_sub, tw_port = port_pos[(t, other)]
            ports.append(PortRef(local_index=local_index[j][v], parent=v,
                                 twin_subdomain=tw_sub, twin_port=tw_port, vtl_index=t))
        port_locals = {p.local_index for p in ports}
        inner = tuple(i for i in range(len(members[j])) if i not in port_locals)
        graph = ElectricGraph(vertices=tuple(loc_vertices[j]),
                              edges=tuple(sorted(set(loc_edges[j]))))
        subdomains.append(Subdomain(id=j, graph=graph, parents=tuple(members[j]),
                                    ports=tuple(ports), inner=inner))

    vtls = tuple(
        VirtualTransmissionLine(id=vid, parent=v,
                                end_a=port_pos[(t, "a")], end_b=port_pos[(t, "b")])
        for t, (v, _r, _sa, _sb, vid) in enumerate(vtl_specs))

    total = sum(s.dim for s in subdomains)
    extra = sum(len(vs.sides) - 1 for vs in scheme.splits.values())
    if total != g.dim + extra:
        raise SchemeError(f"split produced {total} local vertices, expected {g.dim + extra}")
    return SplitSystem(subdomains=tuple(subdomains), vtls=vtls, scheme=scheme,
                       source=graph_to_system(g))


def default_conformal_scheme(
        g: ElectricGraph,
        assignment: Mapping[int, int],
        sides_override: Mapping[int, Sequence[int]] | None = None) -> PartitionScheme:
    """Build a definiteness-preserving scheme from a (possibly partial) assignment.

    Vertices absent from the assignment become boundary; assigned vertices
    whose edges reach another subdomain are promoted to boundary as well.
    Each boundary vertex's weight is shared so that every side receives the
    absolute sum of its incident edge weights (boundary-boundary edges count
    at their share) plus an equal cut of the diagonal surplus; every child
    row then remains diagonally dominant, which keeps each subgraph at least
    SNND.  Current sources and boundary-boundary edges are shared equally.

    sides_override pins the side list (and its ring order) for specific
    boundary vertices; it is required for vertices none of whose neighbors
    is assigned, e.g. four-way cross points.
    """
    sides_override = sides_override or {}
    adj = g.neighbors()
    weights = {v: w for v, w, _ in g.vertices}
    sources = {v: s for v, _, s in g.vertices}
    asg = dict(assignment)

    induced: dict[int, list[int]] = {}
    for v, _, _ in g.vertices:
        s = set()
        if v in asg:
            s.add(asg[v])
        for w, _ in adj[v]:
            if w in asg:
                s.add(asg[w])
        induced[v] = sorted(s)

    boundary: dict[int, tuple[int, ...]] = {}
    final_assignment: dict[int, int] = {}
    for v, _, _ in g.vertices:
        if v in sides_override:
            sides = tuple(sides_override[v])
            if len(sides) not in (2, 4):
                raise SchemeError(f"override for vertex {v} must list 2 or 4 sides")
            boundary[v] = sides
        elif v in asg:
            if len(induced[v]) >= 2:
                boundary[v] = tuple(induced[v])
            else:
                final_assignment[v] = asg[v]
        else:
            if len(induced[v]) >= 2:
                boundary[v] = tuple(induced[v])
            elif len(induced[v]) == 1:
                final_assignment[v] = induced[v][0]
            else:
                raise SchemeError(
                    f"vertex {v} is unassigned and has no assigned neighbor; "
                    f"pass sides_override for it")
    for v, sides in boundary.items():
        if len(sides) == 3 or len(sides) > 4:
            raise SchemeError(
                f"vertex {v} touches {len(sides)} subdomains; only twin (2) and "
                f"four-way (4) splits are supported — supply a manual scheme")

    # normalize subdomain ids to 0..N-1
    used = sorted(set(final_assignment.values())
                  | {s for sides in boundary.values() for s in sides})
    remap = {s: i for i, s in enumerate(used)}
    final_assignment = {v: remap[s] for v, s in final_assignment.items()}
    boundary = {v: tuple(remap[s] for s in sides) for v, sides in boundary.items()}

    edge_splits: dict[tuple[int, int], EdgeSplit] = {}
    for i, j, w in g.edges:
        if i in boundary and j in boundary:
            common = tuple(s for s in boundary[i] if s in boundary[j])
            if not common:
                raise SchemeError(
                    f"boundary-boundary edge ({i}, {j}) has no common side; "
                    f"supply a manual scheme")
            shares = [w / len(common)] * len(common)
            shares[-1] = w - sum(shares[:-1])
            edge_splits[(i, j)] = EdgeSplit(sides=common, weights=tuple(shares))
        elif i in boundary or j in boundary:
            inner_v, bnd_v = (i, j) if j in boundary else (j, i)
            if final_assignment[inner_v] not in boundary[bnd_v]:
                raise SchemeError(
                    f"vertex {bnd_v} needs a child in subdomain "
                    f"{final_assignment[inner_v]}; extend sides_override")

    splits: dict[int, VertexSplit] = {}
    for v, sides in boundary.items():
        k = len(sides)
        edge_sum = dict.fromkeys(sides, 0.0)
        total_abs = 0.0
        for w_vert, wgt in adj[v]:
            total_abs += abs(wgt)
            if w_vert in boundary:
                es = edge_splits[(min(v, w_vert), max(v, w_vert))]
                for s, ws in zip(es.sides, es.weights):
                    if s in edge_sum:
                        edge_sum[s] += abs(ws)
            else:
                edge_sum[final_assignment[w_vert]] += abs(wgt)
        surplus = weights[v] - total_abs
        if surplus < -_SUM_TOL * max(1.0, abs(weights[v])):
            raise SchemeError(
                f"vertex {v} is not diagonally dominant (surplus {surplus}); "
                f"the default scheme needs a diagonally dominant system — "
                f"supply a manual scheme")
        surplus = max(surplus, 0.0)
        wshares = [edge_sum[s] + surplus / k for s in sides]
        wshares[-1] = weights[v] - sum(wshares[:-1])
        sshares = [sources[v] / k] * k
        sshares[-1] = sources[v] - sum(sshares[:-1])
        splits[v] = VertexSplit(sides=sides, weights=tuple(wshares), sources=tuple(sshares))

    return PartitionScheme(assignment=final_assignment, splits=splits,
                           edge_splits=edge_splits)


@dataclass(frozen=True)
class ConformalReport:
    classification: tuple[tuple[int, str], ...]  # (subdomain id, spd|snnd|indefinite)

    @property
    def conformal(self) -> bool:
        return all(c in ("spd", "snnd") for _, c in self.classification)

    @property
    def all_spd(self) -> bool:
        return all(c == "spd" for _, c in self.classification)

    def by_subdomain(self) -> dict[int, str]:
        return dict(self.classification)


def verify_conformal(s: SplitSystem) -> ConformalReport:
    """Classify every subdomain matrix as spd, snnd or indefinite."""
    return ConformalReport(classification=tuple(
        (sub.id, classify_definiteness(sub.system())) for sub in s.subdomains))


def merge(s: SplitSystem, local_solutions: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Assemble the global potential vector from per-subdomain solutions.

    Inner potentials are copied; each split vertex takes the arithmetic mean
    of its children.  Returns (x, max spread among any vertex's children).
    """
    if len(local_solutions) != len(s.subdomains):
        raise MalformedInputError("one local solution vector per subdomain required")
    n = s.source.dim
    acc = np.zeros(n)
    cnt = np.zeros(n)
    spread_lo = np.full(n, np.inf)
    spread_hi = np.full(n, -np.inf)
    for sub, sol in zip(s.subdomains, local_solutions):
        sol = np.asarray(sol, dtype=float)
        if sol.shape != (sub.dim,):
            raise MalformedInputError(
                f"solution for subdomain {sub.id} has shape {sol.shape}, expected ({sub.dim},)")
        for i, parent in enumerate(sub.parents):
            acc[parent] += sol[i]
            cnt[parent] += 1
            spread_lo[parent] = min(spread_lo[parent], sol[i])
            spread_hi[parent] = max(spread_hi[parent], sol[i])
    x = acc / cnt
    gaps = spread_hi - spread_lo
    max_gap = float(gaps[cnt > 1].max()) if (cnt > 1).any() else 0.0
    return x, max_gap


# ---------------------------------------------------------------------------
# Scheme serialization: sectioned key-value text
# ---------------------------------------------------------------------------

def scheme_to_text(scheme: PartitionScheme) -> str:
    lines = ["[assignment]"]
    for v in sorted(scheme.assignment):
        lines.append(f"{v} = {scheme.assignment[v]}")
    for v in sorted(scheme.splits):
        vs = scheme.splits[v]
        lines.append(f"[vertex {v}]")
        lines.append("sides = " + " ".join(str(s) for s in vs.sides))
        lines.append("weights = " + " ".join(format_float(w) for w in vs.weights))
        lines.append("sources = " + " ".join(format_float(w) for w in vs.sources))
    for (i, j) in sorted(scheme.edge_splits):
        es = scheme.edge_splits[(i, j)]
        lines.append(f"[edge {i} {j}]")
        lines.append("sides = " + " ".join(str(s) for s in es.sides))
        lines.append("weights = " + " ".join(format_float(w) for w in es.weights))
    return "\n".join(lines) + "\n"


def scheme_from_text(text: str) -> PartitionScheme:
    assignment: dict[int, int] = {}
    splits: dict[int, VertexSplit] = {}
    edge_splits: dict[tuple[int, int], EdgeSplit] = {}
    section: list[str] | None = None
    pending: dict[str, str] = {}

    def flush() -> None:
        if section is None:
            return
        if section[0] == "vertex":
            v = int(section[1])
            splits[v] = VertexSplit(
                sides=tuple(int(t) for t in pending["sides"].split()),
                weights=tuple(float(t) for t in pending["weights"].split()),
                sources=tuple(float(t) for t in pending["sources"].split()))
        elif section[0] == "edge":
            i, j = int(section[1]), int(section[2])
            edge_splits[(i, j)] = EdgeSplit(
                sides=tuple(int(t) for t in pending["sides"].split()),
                weights=tuple(float(t) for t in pending["weights"].split()))

    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            flush()
            pending = {}
            section = line.strip("[]").split()
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if section == ["assignment"]:
            assignment[int(key)] = int(value)
        elif section is None:
            raise MalformedInputError(f"scheme line outside any section: {raw!r}")
        else:
            pending[key] = value
    flush()
    return PartitionScheme(assignment=assignment, splits=splits, edge_splits=edge_splits)


def save_scheme(scheme: PartitionScheme, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(scheme_to_text(scheme))


def load_scheme(path: str) -> PartitionScheme:
    with open(path) as fh:
        return scheme_from_text(fh.read())


def export_split(s: SplitSystem, directory: str) -> None:
    """Dump each subdomain (matrix + sources) and its port table for inspection."""
    os.makedirs(directory, exist_ok=True)
    for sub in s.subdomains:
        sys = sub.system()
        write_matrix(sys, os.path.join(directory, f"sub{sub.id}.mtx"))
        write_vector(sys.rhs, os.path.join(directory, f"sub{sub.id}.rhs.txt"))
        with open(os.path.join(directory, f"sub{sub.id}.ports.txt"), "w") as fh:
            fh.write("port local_index parent twin_subdomain twin_port vtl\n")
            for pi, p in enumerate(sub.ports):
                fh.write(f"{pi} {p.local_index} {p.parent} {p.twin_subdomain} "
                         f"{p.twin_port} {s.vtls[p.vtl_index].id}\n")
    with open(os.path.join(directory, "vtls.txt"), "w") as fh:
        fh.write("vtl parent sub_a port_a sub_b port_b z\n")
        for line in s.vtls:
            fh.write(f"{line.id} {line.parent} {line.end_a[0]} {line.end_a[1]} "
                     f"{line.end_b[0]} {line.end_b[1]} {format_float(line.z)}\n")
