"""Exact approach: coupled car/driver flows on the time-expanded network."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .instance import Instance, task_groups
from .mip import IntegerProgram, MipSolution, Relation, SolveLimits, Status
from .mip import solve as mip_solve
from .schedule import (Move, Tour, TransportationSchedule, normalize_moves, simulate_states,
                       validate_schedule)

HOLDOVER = 0
RELOCATION = 1


class InvalidHorizon(ValueError):
    pass


class CorruptFlow(RuntimeError):
    """A flow that should satisfy the model constraints does not."""


@dataclass(frozen=True, eq=False)
class TimeExpandedNetwork:
    """Nodes ``(v, t)`` for ``t = 0..T``; holdover arcs first, then relocation arcs.

    Node ``(v, t)`` has id ``v * (T + 1) + t``.
    """

    n_stations: int
    T: int
    depot: int
    tail: np.ndarray
    head: np.ndarray
    kind: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    t_from: np.ndarray
    t_to: np.ndarray
    cost: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_stations * (self.T + 1)

    @property
    def n_arcs(self) -> int:
        return int(self.tail.shape[0])

    def node(self, v: int, t: int) -> int:
        return v * (self.T + 1) + t

    def node_label(self, node: int) -> tuple[int, int]:
        return divmod(node, self.T + 1)

    @property
    def holdover_arcs(self) -> np.ndarray:
        return np.flatnonzero(self.kind == HOLDOVER)

    @property
    def relocation_arcs(self) -> np.ndarray:
        return np.flatnonzero(self.kind == RELOCATION)

    def holdover_arc(self, v: int, t: int) -> int:
        return v * self.T + t

    def arc_lookup(self) -> dict[tuple[int, int, int], int]:
        """``(origin, destination, departure) -> arc`` for relocation arcs."""
        rel = self.relocation_arcs
        return {(int(self.src[a]), int(self.dst[a]), int(self.t_from[a])): int(a) for a in rel}

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; raises if the network has a directed cycle."""
        indeg = np.bincount(self.head, minlength=self.n_nodes)
        order_idx = np.argsort(self.tail, kind="stable")
        starts = np.searchsorted(self.tail[order_idx], np.arange(self.n_nodes + 1))
        queue = deque(int(v) for v in np.flatnonzero(indeg == 0))
        order = []
        indeg = indeg.copy()
        while queue:
            u = queue.popleft()
            order.append(u)
            for a in order_idx[starts[u]:starts[u + 1]]:
                h = int(self.head[a])
                indeg[h] -= 1
                if indeg[h] == 0:
                    queue.append(h)
        if len(order) != self.n_nodes:
            raise CorruptFlow("time-expanded network contains a cycle")
        return order


def build_time_expanded(instance: Instance) -> TimeExpandedNetwork:
    T = instance.T
    if T <= 0:
        raise InvalidHorizon(f"horizon T = {T} must be positive")
    n = instance.n
    dist = instance.metric.dist

    v_h = np.repeat(np.arange(n), T)
    t_h = np.tile(np.arange(T), n)
    parts = [(v_h, v_h, t_h, t_h + 1, np.zeros_like(v_h), np.full_like(v_h, HOLDOVER))]
    for u, v in instance.graph.undirected_pairs():
        d = int(dist[u, v])
        if d > T:
            continue
        ts = np.arange(T - d + 1)
        for a, b in ((u, v), (v, u)):
            parts.append((np.full_like(ts, a), np.full_like(ts, b), ts, ts + d,
                          np.full_like(ts, d), np.full_like(ts, RELOCATION)))
    src, dst, t0, t1, cost, kind = (np.concatenate(col).astype(np.int64) for col in zip(*parts))
    tail = src * (T + 1) + t0
    head = dst * (T + 1) + t1
    net = TimeExpandedNetwork(n, T, instance.depot, tail, head, kind, src, dst, t0, t1, cost)
    for arr in (tail, head, kind, src, dst, t0, t1, cost):
        arr.setflags(write=False)
    return net


@dataclass
class CoupledFlow:
    f: np.ndarray
    F: np.ndarray

    def __post_init__(self) -> None:
        self.f = np.asarray(self.f, dtype=np.int64)
        self.F = np.asarray(self.F, dtype=np.int64)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CoupledFlow) and np.array_equal(self.f, other.f)
                and np.array_equal(self.F, other.F))


def node_balances(net: TimeExpandedNetwork, instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Required ``out - in`` per node for the car and the driver flow."""
    car = np.zeros(net.n_nodes, dtype=np.int64)
    drv = np.zeros(net.n_nodes, dtype=np.int64)
    for v in range(net.n_stations):
        car[net.node(v, 0)] += instance.z0[v]
        car[net.node(v, net.T)] -= instance.zT[v]
    drv[net.node(instance.depot, 0)] += instance.k
    drv[net.node(instance.depot, net.T)] -= instance.k
    return car, drv


def check_coupled_flow(net: TimeExpandedNetwork, flow: CoupledFlow, instance: Instance) -> list[str]:
    """Every violated flow constraint, checked in integer arithmetic."""
    problems = []
    f, F = flow.f, flow.F
    if np.any(f < 0) or np.any(F < 0):
        problems.append("negative flow")
    rel = net.relocation_arcs
    bad = rel[f[rel] > instance.L * F[rel]]
    if bad.size:
        problems.append(f"coupling f <= L*F violated on {bad.size} relocation arc(s), first {int(bad[0])}")
    hold = net.holdover_arcs
    cap = np.asarray(instance.capacity, dtype=np.int64)[net.src[hold]]
    bad = hold[f[hold] > cap]
    if bad.size:
        problems.append(f"holdover capacity exceeded on {bad.size} arc(s), first {int(bad[0])}")
    car, drv = node_balances(net, instance)
    if np.any(_kernels.node_imbalance(net.tail, net.head, f, net.n_nodes) != car):
        problems.append("car flow conservation violated")
    if np.any(_kernels.node_imbalance(net.tail, net.head, F, net.n_nodes) != drv):
        problems.append("driver flow conservation violated")
    return problems


@dataclass
class ExactModel:
    program: IntegerProgram
    f_vars: np.ndarray
    F_vars: np.ndarray


def formulate_exact(net: TimeExpandedNetwork, instance: Instance, *,
                    strengthen: bool = False) -> ExactModel:
    """The coupled-flow ILP on ``net``.

    With ``strengthen`` set, relocation arcs no driver can use (it could not
    leave the depot early enough or get back by ``T``) are fixed to zero, and
    integer trip counts per edge are added for branching, along with valid
    inequalities: the cars of a set of overfull stations leave it (and those
    of a set of underfull stations enter it) on at least ``ceil(|x(S)| / L)``
    convoys, and some driver leaves the depot when any task exists.  None of
    this changes the integer optimum.
    """
    A = net.n_arcs
    L, k = instance.L, instance.k
    prog = IntegerProgram(f"relocation_ten_T{net.T}")
    rel_cap = min(L * k, instance.total_cars)
    usable = _driver_reachable(net, instance) if strengthen else np.ones(A, dtype=bool)
    for a in range(A):
        if net.kind[a] == HOLDOVER:
            ub = instance.capacity[int(net.src[a])]
        else:
            ub = rel_cap if usable[a] else 0
        prog.add_var(f"f_{a}", 0, ub)
    for a in range(A):
        prog.add_var(f"F_{a}", 0, k if usable[a] else 0, priority=1)
    f_vars = np.arange(A)
    F_vars = np.arange(A, 2 * A)

    car, drv = node_balances(net, instance)
    out_arcs: list[list[int]] = [[] for _ in range(net.n_nodes)]
    in_arcs: list[list[int]] = [[] for _ in range(net.n_nodes)]
    for a, (u, w) in enumerate(zip(net.tail.tolist(), net.head.tolist())):
        out_arcs[u].append(a)
        in_arcs[w].append(a)
    for node in range(net.n_nodes):
        v, t = net.node_label(node)
        for offset, rhs, label in ((0, car[node], "car"), (A, drv[node], "drv")):
            coeffs = {offset + a: 1 for a in out_arcs[node]}
            for a in in_arcs[node]:
                coeffs[offset + a] = coeffs.get(offset + a, 0) - 1
            if not coeffs:
                continue
            prog.add_constraint(coeffs, Relation.EQ, int(rhs), f"{label}_bal_{v}_{t}")
    for a in net.relocation_arcs.tolist():
        prog.add_constraint({a: 1, A + a: -L}, Relation.LE, 0, f"couple_{a}")
    if strengthen:
        _add_cut_sets(prog, instance, _add_edge_counts(prog, net))
    prog.set_objective({A + a: int(net.cost[a]) for a in net.relocation_arcs.tolist()})
    return ExactModel(prog, f_vars, F_vars)


def _driver_reachable(net: TimeExpandedNetwork, instance: Instance) -> np.ndarray:
    dist = instance.metric.dist
    depot = instance.depot
    return ((net.kind == HOLDOVER)
            | ((dist[depot, net.src] <= net.t_from) & (net.t_to + dist[net.dst, depot] <= net.T)))


def _add_edge_counts(prog: IntegerProgram, net: TimeExpandedNetwork) -> dict[tuple[int, int], int]:
    """Integer trip counts per directed edge, branched on before single arcs.

    Fixing how often each edge is driven cuts across the many time-shifted
    copies of one tour, which arc-level branching would enumerate one by one.
    """
    A = net.n_arcs
    groups: dict[tuple[int, int], list[int]] = {}
    for a in net.relocation_arcs.tolist():
        groups.setdefault((int(net.src[a]), int(net.dst[a])), []).append(a)
    counts = {}
    for (u, v), arcs in sorted(groups.items()):
        y = prog.add_var(f"y_{u}_{v}", 0, math.inf, priority=2)
        coeffs: dict[int, int] = {A + a: 1 for a in arcs}
        coeffs[y] = -1
        prog.add_constraint(coeffs, Relation.EQ, 0, f"count_{u}_{v}")
        counts[(u, v)] = y
    return counts


def _add_cut_sets(prog: IntegerProgram, instance: Instance, counts: dict[tuple[int, int], int]) -> None:
    surplus = instance.surplus
    for group in task_groups(instance):
        inside = set(group)
        x = int(surplus[list(group)].sum())
        if x > 0:
            crossing = [y for (u, v), y in counts.items() if u in inside and v not in inside]
        else:
            crossing = [y for (u, v), y in counts.items() if v in inside and u not in inside]
        need = -(-abs(x) // instance.L)
        prog.add_constraint({y: 1 for y in crossing}, Relation.GE, need, "cut_" + "_".join(map(str, group)))
    if np.any(surplus):
        leave = [y for (u, _), y in counts.items() if u == instance.depot]
        prog.add_constraint({y: 1 for y in leave}, Relation.GE, 1, "leave_depot")


def decompose_flows(net: TimeExpandedNetwork, flow: CoupledFlow, instance: Instance) -> TransportationSchedule:
    """Split the driver flow into ``k`` depot-to-depot tours and hand out the cars.

    Each tour follows, at every node, the outgoing arc with residual driver
    flow whose head is smallest by ``(time, station)``.  Cars on a relocation
    arc are given to the tours using it in extraction order, ``L`` at a time.
    """
    if check_coupled_flow(net, flow, instance):
        raise CorruptFlow("; ".join(check_coupled_flow(net, flow, instance)))
    out_arcs: list[list[int]] = [[] for _ in range(net.n_nodes)]
    order = np.lexsort((net.dst, net.t_to))
    for a in order.tolist():
        out_arcs[int(net.tail[a])].append(a)

    resF = flow.F.copy()
    resf = flow.f.copy()
    start = net.node(instance.depot, 0)
    goal = net.node(instance.depot, net.T)
    tours = []
    for driver in range(1, instance.k + 1):
        node, path = start, []
        while node != goal:
            for a in out_arcs[node]:
                if resF[a] > 0:
                    break
            else:
                raise CorruptFlow(f"driver path stuck at node {net.node_label(node)}")
            resF[a] -= 1
            path.append(a)
            node = int(net.head[a])
        moves = []
        for a in path:
            load = 0
            if net.kind[a] == RELOCATION:
                load = int(min(instance.L, resf[a]))
                resf[a] -= load
            moves.append(Move(driver, int(net.src[a]), int(net.dst[a]), int(net.t_from[a]),
                              int(net.t_to[a]), load))
        tours.append(Tour(driver, tuple(normalize_moves(moves))))
    if np.any(resF):
        raise CorruptFlow("driver flow left over after extracting k tours")
    if np.any(resf[net.relocation_arcs]):
        raise CorruptFlow("car flow on relocation arcs not covered by driver tours")
    return TransportationSchedule(tours)


def aggregate_schedule(net: TimeExpandedNetwork, schedule: TransportationSchedule,
                       instance: Instance) -> CoupledFlow:
    """Map a schedule back onto arc flows; inverse of :func:`decompose_flows`."""
    f = np.zeros(net.n_arcs, dtype=np.int64)
    F = np.zeros(net.n_arcs, dtype=np.int64)
    lookup = net.arc_lookup()
    for m in schedule.moves():
        if m.is_waiting:
            for t in range(m.departure, m.arrival):
                F[net.holdover_arc(m.origin, t)] += 1
            continue
        key = (m.origin, m.destination, m.departure)
        if key not in lookup:
            raise ValueError(f"move {key} does not follow a relocation arc")
        a = lookup[key]
        F[a] += 1
        f[a] += m.load
    z = simulate_states(schedule, instance).z
    hold = net.holdover_arcs
    f[hold] = z[net.src[hold], net.t_from[hold]]
    return CoupledFlow(f, F)


def _tidy_car_flow(net: TimeExpandedNetwork, instance: Instance, F: np.ndarray, f: np.ndarray,
                   strengthen: bool, limits: SolveLimits | None, backend: str) -> np.ndarray:
    # with F fixed this is a network flow with integral capacities: the LP optimum is integral
    model = formulate_exact(net, instance, strengthen=strengthen)
    prog = model.program
    for a, value in enumerate(F.tolist()):
        var = prog.variables[int(model.F_vars[a])]
        var.lb = var.ub = value
    prog.set_objective({int(model.f_vars[a]): int(net.cost[a]) for a in net.relocation_arcs.tolist()})
    sol = mip_solve(prog, limits, backend=backend)
    if sol.status is not Status.OPTIMAL:
        return f
    return np.rint(sol.x[model.f_vars]).astype(np.int64)


@dataclass
class ExactResult:
    solution: MipSolution
    schedule: TransportationSchedule | None
    flow: CoupledFlow | None
    network: TimeExpandedNetwork
    model: ExactModel

    @property
    def total_length(self) -> int | None:
        return None if self.solution.objective_value is None else int(round(self.solution.objective_value))


def start_point(net: TimeExpandedNetwork, model: ExactModel, schedule: TransportationSchedule,
                instance: Instance) -> list[int] | None:
    """The model variables matching ``schedule``, or None if it cannot fit.

    Moves between stations that share no edge follow a shortest path of
    edges.  Drivers wait at the depot before their first and after their last
    move, missing drivers wait all along, and gaps between moves are spent
    waiting.  Schedules that break the horizon or use too many drivers give
    None.
    """
    if len(schedule) > instance.k or not validate_schedule(schedule, instance, check_horizon=True).ok:
        return None
    depot, T = instance.depot, instance.T
    dist = instance.metric.dist
    lookup = net.arc_lookup()
    neighbours: dict[int, list[int]] = {}
    for u, v in instance.graph.undirected_pairs():
        neighbours.setdefault(u, []).append(v)
        neighbours.setdefault(v, []).append(u)

    def hops(u: int, v: int, t: int):
        while u != v:
            w = next(w for w in neighbours[u] if dist[u, w] + dist[w, v] == dist[u, v])
            yield lookup[(u, w, t)]
            u, t = w, t + int(dist[u, w])
    f = np.zeros(net.n_arcs, dtype=np.int64)
    F = np.zeros(net.n_arcs, dtype=np.int64)

    def wait(v: int, start: int, end: int) -> None:
        for t in range(start, end):
            F[net.holdover_arc(v, t)] += 1

    for _ in range(instance.k - len(schedule)):
        wait(depot, 0, T)
    for tour in schedule:
        here, now = depot, 0
        for m in tour.moves:
            wait(here, now, m.departure)
            if m.is_waiting:
                wait(m.origin, m.departure, m.arrival)
            else:
                for a in hops(m.origin, m.destination, m.departure):
                    F[a] += 1
                    f[a] += m.load
            here, now = m.destination, m.arrival
        wait(here, now, T)
    hold = net.holdover_arcs
    f[hold] = simulate_states(schedule, instance).z[net.src[hold], net.t_from[hold]]

    prog = model.program
    x = [0] * prog.n_vars
    for a in range(net.n_arcs):
        x[int(model.f_vars[a])] = int(f[a])
        x[int(model.F_vars[a])] = int(F[a])
    for a in net.relocation_arcs.tolist():
        name = f"y_{int(net.src[a])}_{int(net.dst[a])}"
        if name in prog:
            x[prog.index(name)] += int(F[a])
    return x


def solve_exact(instance: Instance, limits: SolveLimits | None = None, backend: str = "internal",
                *, strengthen: bool = True, tidy_cars: bool = True,
                start: TransportationSchedule | None = None) -> ExactResult:
    """Solve the time-expanded model and turn the optimal flows into tours.

    Car flow costs nothing in the model, so an optimal solution may shuttle
    cars back and forth.  With ``tidy_cars`` the driver flow is kept and the
    cars are re-routed to minimise car-distance, which leaves the objective
    unchanged.  A ``start`` schedule that fits the horizon (a LiftFlow
    result, say) is handed to the solver as its first incumbent.
    """
    net = build_time_expanded(instance)
    model = formulate_exact(net, instance, strengthen=strengthen)
    if start is not None:
        model.program.set_start(start_point(net, model, start, instance))
    sol = mip_solve(model.program, limits, backend=backend)
    if not sol.status.has_solution:
        return ExactResult(sol, None, None, net, model)
    x = np.rint(sol.x).astype(np.int64)
    f = x[model.f_vars]
    if tidy_cars:
        f = _tidy_car_flow(net, instance, x[model.F_vars], f, strengthen, limits, backend)
    flow = CoupledFlow(f, x[model.F_vars])
    problems = check_coupled_flow(net, flow, instance)
    if problems:
        raise CorruptFlow("solver returned an infeasible flow: " + "; ".join(problems))
    schedule = decompose_flows(net, flow, instance)
    length = schedule.total_length(instance)
    if length != int(round(sol.objective_value)):
        raise CorruptFlow(f"schedule length {length} differs from objective {sol.objective_value}")
    return ExactResult(sol, schedule, flow, net, model)
