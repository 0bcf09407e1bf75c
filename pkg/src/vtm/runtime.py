"""Bulk-synchronous neighbor-to-neighbor iteration engine.

One logical worker per subdomain.  Every round, each worker consumes the
(potential, current) pairs its neighbors produced in the previous round,
solves its factored local system once, and publishes new boundary values.
Workers never broadcast; values travel only along transmission lines.  The
engine is deterministic: sequential and threaded execution produce
bit-identical traces because each worker's update depends only on the
previous round's immutable state.

Convergence detection runs in the emulator (outside the modeled message
traffic): the run stops when the largest relative boundary change drops
below the configured threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from vtm.core_graph import format_float
from vtm.errors import MalformedInputError, ProtocolError
from vtm.local_solver import ImpedanceAssignment, local_iterate, precondition, assemble
from vtm.partitioner import SplitSystem

TERMINATION_METRIC = "relative_boundary_delta"


@dataclass(frozen=True)
class RunConfig:
    """Iteration control: threshold, cap, initial boundary values."""

    epsilon: float = 1e-12
    max_iter: int = 1000
    initial_u: float = 0.0
    initial_omega: float = 0.0
    termination_metric: str = TERMINATION_METRIC

    def __post_init__(self) -> None:
        if not (self.epsilon > 0.0 and math.isfinite(self.epsilon)):
            raise MalformedInputError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise MalformedInputError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.termination_metric != TERMINATION_METRIC:
            raise MalformedInputError(
                f"unsupported termination metric {self.termination_metric!r}")


@dataclass(frozen=True)
class BoundaryMessage:
    """Boundary values one subdomain sends to one neighbor for one round.

    ports lists the receiver's port indices; u/omega are the sender-side
    twin values those ports consume next round.
    """

    iteration: int
    sender: int
    receiver: int
    ports: tuple[int, ...]
    u: tuple[float, ...]
    omega: tuple[float, ...]

    def __post_init__(self) -> None:
        for value in (*self.u, *self.omega):
            if not math.isfinite(value):
                raise ProtocolError(
                    f"non-finite boundary value in message {self.sender}->{self.receiver} "
                    f"at iteration {self.iteration}")


@dataclass(frozen=True)
class WorkerState:
    sub_id: int
    u: np.ndarray
    omega: np.ndarray
    x_local: np.ndarray


@dataclass(frozen=True)
class IterationRecord:
    k: int
    max_boundary_delta: float
    residual_inf: float
    rms_error: float | None


@dataclass(frozen=True)
class IterationReport:
    records: tuple[IterationRecord, ...]
    converged: bool
    iterations: int
    x: np.ndarray
    twin_gap_u: float
    twin_gap_omega: float
    messages: tuple[BoundaryMessage, ...] = field(default=())

    def trace_csv(self) -> str:
        lines = ["iter,max_boundary_delta,residual_inf,rms_error"]
        for r in self.records:
            rms = "" if r.rms_error is None else format_float(r.rms_error)
            lines.append(f"{r.k},{format_float(r.max_boundary_delta)},"
                         f"{format_float(r.residual_inf)},{rms}")
        return "\n".join(lines) + "\n"


class VtmEngine:
    """Holds the factored subdomains and drives synchronous rounds."""

    def __init__(self, split: SplitSystem, impedances: ImpedanceAssignment,
                 *, mode: str = "sequential", record_messages: bool = False):
        if mode not in ("sequential", "thread"):
            raise MalformedInputError(f"unknown engine mode {mode!r}")
        self.split = split
        self.mode = mode
        self.record_messages = record_messages
        self.message_log: list[BoundaryMessage] = []
        self.locals = [assemble(sub) for sub in split.subdomains]
        self.precondition_calls = 0
        self.factors = []
        for j, local in enumerate(self.locals):
            zmat = impedances.local_matrix(split, j)
            self.factors.append(precondition(local, zmat))
            self.precondition_calls += 1
        # wiring[j][t] = (twin subdomain, twin port) feeding port t of subdomain j
        self.wiring = [
            tuple((p.twin_subdomain, p.twin_port) for p in sub.ports)
            for sub in split.subdomains
        ]
        self._matrix = split.source.to_csr()
        self._rhs = split.source.rhs_array()
        n = split.source.dim
        self._parent_idx = [np.array(sub.parents, dtype=int) for sub in split.subdomains]
        self._merge_cnt = np.zeros(n)
        for idx in self._parent_idx:
            self._merge_cnt[idx] += 1
        self._pool: ThreadPoolExecutor | None = None

    def _merge(self, states: tuple[WorkerState, ...]) -> np.ndarray:
        acc = np.zeros(self.split.source.dim)
        for idx, st in zip(self._parent_idx, states):
            acc[idx] += st.x_local
        return acc / self._merge_cnt

    # -- state handling ----------------------------------------------------

    def initial_states(self, cfg: RunConfig) -> tuple[WorkerState, ...]:
        states = []
        for sub in self.split.subdomains:
            nport = len(sub.ports)
            states.append(WorkerState(
                sub_id=sub.id,
                u=np.full(nport, float(cfg.initial_u)),
                omega=np.full(nport, float(cfg.initial_omega)),
                x_local=np.zeros(sub.dim)))
        return tuple(states)

    def _check_states(self, states: tuple[WorkerState, ...]) -> None:
        if len(states) != len(self.split.subdomains):
            raise ProtocolError(
                f"expected {len(self.split.subdomains)} worker states, got {len(states)}")
        for sub, st in zip(self.split.subdomains, states):
            if st.sub_id != sub.id or len(st.u) != len(sub.ports) \
                    or len(st.omega) != len(sub.ports):
                raise ProtocolError(f"worker state for subdomain {sub.id} is malformed")

    def _work(self, j: int, states: tuple[WorkerState, ...]) -> WorkerState:
        inc_u = np.array([states[ts].u[tp] for ts, tp in self.wiring[j]])
        inc_w = np.array([states[ts].omega[tp] for ts, tp in self.wiring[j]])
        local = self.locals[j]
        res = local_iterate(self.factors[j], local.f, local.g, (inc_u, inc_w))
        return WorkerState(sub_id=j, u=res.u, omega=res.omega, x_local=res.x_local)

    def step(self, states: tuple[WorkerState, ...], k: int) -> tuple[WorkerState, ...]:
        """One synchronous round; a pure function of the previous states."""
        self._check_states(states)
        indices = range(len(self.split.subdomains))
        if self._pool is not None:
            new_states = tuple(self._pool.map(lambda j: self._work(j, states), indices))
        else:
            new_states = tuple(self._work(j, states) for j in indices)
        if self.record_messages:
            self.message_log.extend(self._messages(new_states, k))
        return new_states

    def _messages(self, states: tuple[WorkerState, ...], k: int) -> list[BoundaryMessage]:
        grouped: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
        for j, sub in enumerate(self.split.subdomains):
            for t, p in enumerate(sub.ports):
                # port t's value is consumed by the twin port on the remote side
                grouped.setdefault((j, p.twin_subdomain), []).append(
                    (p.twin_port, float(states[j].u[t]), float(states[j].omega[t])))
        out = []
        for (src, dst) in sorted(grouped):
            payload = sorted(grouped[(src, dst)])
            out.append(BoundaryMessage(
                iteration=k, sender=src, receiver=dst,
                ports=tuple(p for p, _, _ in payload),
                u=tuple(u for _, u, _ in payload),
                omega=tuple(w for _, _, w in payload)))
        return out

    # -- metrics -----------------------------------------------------------

    def _boundary_delta(self, old: tuple[WorkerState, ...],
                        new: tuple[WorkerState, ...]) -> float:
        worst = 0.0
        for o, n in zip(old, new):
            if len(n.u) == 0:
                continue
            rel = (np.abs(n.u - o.u) + np.abs(n.omega - o.omega)) / (1.0 + np.abs(n.u))
            worst = max(worst, float(rel.max()))
        return worst

    def twin_gaps(self, states: tuple[WorkerState, ...]) -> tuple[float, float]:
        gap_u = 0.0
        gap_w = 0.0
        for line in self.split.vtls:
            (sa, pa), (sb, pb) = line.end_a, line.end_b
            gap_u = max(gap_u, abs(states[sa].u[pa] - states[sb].u[pb]))
            gap_w = max(gap_w, abs(states[sa].omega[pa] + states[sb].omega[pb]))
        return gap_u, gap_w

    # -- driver ------------------------------------------------------------

    def run(self, cfg: RunConfig, oracle: np.ndarray | None = None) -> IterationReport:
        states = self.initial_states(cfg)
        if self.record_messages:
            self.message_log.extend(self._messages(states, 0))
        records: list[IterationRecord] = []
        converged = False
        x = np.zeros(self.split.source.dim)
        try:
            if self.mode == "thread" and len(self.split.subdomains) > 1:
                self._pool = ThreadPoolExecutor(max_workers=len(self.split.subdomains))
            for k in range(1, cfg.max_iter + 1):
                new_states = self.step(states, k)
                delta = self._boundary_delta(states, new_states)
                states = new_states
                x = self._merge(states)
                residual = float(np.abs(self._matrix @ x - self._rhs).max(initial=0.0))
                rms = None
                if oracle is not None:
                    diff = x - np.asarray(oracle, dtype=float)
                    rms = float(np.sqrt(np.mean(diff * diff)))
                records.append(IterationRecord(k=k, max_boundary_delta=delta,
                                               residual_inf=residual, rms_error=rms))
                if delta < cfg.epsilon:
                    converged = True
                    break
        finally:
            if self._pool is not None:
                self._pool.shutdown()
                self._pool = None
        gap_u, gap_w = self.twin_gaps(states)
        return IterationReport(records=tuple(records), converged=converged,
                               iterations=len(records), x=x,
                               twin_gap_u=gap_u, twin_gap_omega=gap_w,
                               messages=tuple(self.message_log))


def run_vtm(s: SplitSystem, Z: ImpedanceAssignment, cfg: RunConfig,
            *, mode: str = "sequential", oracle: np.ndarray | None = None,
            record_messages: bool = False) -> IterationReport:
    """Partitioned solve: factored local systems coupled by transmission lines."""
    engine = VtmEngine(s, Z, mode=mode, record_messages=record_messages)
    return engine.run(cfg, oracle=oracle)


def audit_message_log(s: SplitSystem, messages: tuple[BoundaryMessage, ...]) -> None:
    """Assert strict neighbor-to-neighbor traffic: every message travels along
    a transmission line, one message per directed pair per iteration."""
    adjacent = set()
    for line in s.vtls:
        adjacent.add((line.end_a[0], line.end_b[0]))
        adjacent.add((line.end_b[0], line.end_a[0]))
    seen: set[tuple[int, int, int]] = set()
    for msg in messages:
        pair = (msg.sender, msg.receiver)
        if pair not in adjacent:
            raise ProtocolError(f"message between non-neighbors {pair}")
        key = (msg.iteration, msg.sender, msg.receiver)
        if key in seen:
            raise ProtocolError(f"duplicate message for {key}")
        seen.add(key)


def write_trace(report: IterationReport, path: str, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(report.trace_csv())


def write_message_log(messages: tuple[BoundaryMessage, ...], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("k,src,dst,port,u,omega\n")
        for msg in messages:
            for port, u, w in zip(msg.ports, msg.u, msg.omega):
                fh.write(f"{msg.iteration},{msg.sender},{msg.receiver},{port},"
                         f"{format_float(u)},{format_float(w)}\n")
