"""Aggregated-network heuristic with lifted flows.

Step one solves a coupled car/driver flow on a small network that only
contains the depot and the stations with a task.  Step two cuts the driver
flow into pre-tours, derives drop-before-pickup precedences between them,
and times every move so that a convoy never picks up cars that have not yet
arrived.  The optimal step-one objective is a lower bound on the optimal
total tour length when station capacities and the horizon do not bind.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .instance import Instance, task_groups
from .mip import IntegerProgram, MipSolution, Relation, SolveLimits, Status
from .mip import solve as mip_solve
from .schedule import (Move, Tour, TransportationSchedule, validate_schedule, waiting_tour)

log = logging.getLogger(__name__)

START, OVERFULL, CONNECTION, UNDERFULL, SINK = range(5)
ARC_CLASSES = ("start", "overfull", "connection", "underfull", "sink")


class ModelDegenerate(ValueError):
    """The instance cannot be mapped onto the aggregated network."""


class HeuristicFailed(RuntimeError):
    pass


class InfeasiblePrecedence(RuntimeError):
    """A pickup cannot be covered even by every preceding drop."""


class CorruptFlow(RuntimeError):
    pass


# --------------------------------------------------------------------------
# aggregated network and its flows
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AggregatedNetwork:
    """Depot source, overfull and underfull stations, depot sink.

    Arcs are stored by station id; start arcs leave the depot and sink arcs
    enter it, so the two depot copies are told apart by the arc class.
    """

    depot: int
    overfull: tuple[int, ...]
    underfull: tuple[int, ...]
    src: np.ndarray
    dst: np.ndarray
    klass: np.ndarray
    weight: np.ndarray

    @property
    def n_arcs(self) -> int:
        return int(self.src.shape[0])

    @property
    def stations(self) -> tuple[int, ...]:
        return tuple(sorted(self.overfull + self.underfull))

    @property
    def relocation_arcs(self) -> np.ndarray:
        return np.flatnonzero((self.klass != START) & (self.klass != SINK))

    def arcs_of(self, klass: int) -> np.ndarray:
        return np.flatnonzero(self.klass == klass)

    def class_counts(self) -> dict[str, int]:
        return {name: int(np.count_nonzero(self.klass == i)) for i, name in enumerate(ARC_CLASSES)}

    def cost(self, F: np.ndarray) -> int:
        return int(np.dot(self.weight, F))


def build_aggregated(instance: Instance) -> AggregatedNetwork:
    surplus = instance.surplus
    depot = instance.depot
    if surplus[depot] != 0:
        raise ModelDegenerate(f"depot {depot} has a task ({int(surplus[depot]):+d}); it must be balanced")
    over = tuple(int(v) for v in np.flatnonzero(surplus > 0))
    under = tuple(int(v) for v in np.flatnonzero(surplus < 0))
    if bool(over) != bool(under):
        raise ModelDegenerate("tasks exist but only on one side (overfull or underfull)")

    arcs: list[tuple[int, int, int]] = [(depot, o, START) for o in over]
    arcs += [(a, b, OVERFULL) for a in over for b in over if a != b]
    for o in over:
        for u in under:
            arcs += [(o, u, CONNECTION), (u, o, CONNECTION)]
    arcs += [(a, b, UNDERFULL) for a in under for b in under if a != b]
    arcs += [(u, depot, SINK) for u in under]

    dist = instance.metric.dist
    src = np.array([a[0] for a in arcs], dtype=np.int64)
    dst = np.array([a[1] for a in arcs], dtype=np.int64)
    klass = np.array([a[2] for a in arcs], dtype=np.int64)
    weight = dist[src, dst].astype(np.int64) if arcs else np.zeros(0, dtype=np.int64)
    for arr in (src, dst, klass, weight):
        arr.setflags(write=False)
    return AggregatedNetwork(depot, over, under, src, dst, klass, weight)


@dataclass
class AggregatedFlow:
    f: np.ndarray
    F: np.ndarray

    def __post_init__(self) -> None:
        self.f = np.asarray(self.f, dtype=np.int64)
        self.F = np.asarray(self.F, dtype=np.int64)

    def __eq__(self, other) -> bool:
        return (isinstance(other, AggregatedFlow) and np.array_equal(self.f, other.f)
                and np.array_equal(self.F, other.F))


def check_aggregated_flow(net: AggregatedNetwork, flow: AggregatedFlow, instance: Instance) -> list[str]:
    """Violated balance or coupling conditions, in integer arithmetic."""
    problems = []
    f, F = flow.f, flow.F
    if np.any(f < 0) or np.any(F < 0):
        problems.append("negative flow")
    rel = net.relocation_arcs
    bad = rel[f[rel] > instance.L * F[rel]]
    if bad.size:
        problems.append(f"coupling f <= L*F violated on {bad.size} arc(s), first {int(bad[0])}")
    depot_arcs = np.flatnonzero((net.klass == START) | (net.klass == SINK))
    if np.any(f[depot_arcs]):
        problems.append("cars on a depot arc")
    surplus = instance.surplus
    for v in net.stations:
        out_ = net.src == v
        in_ = net.dst == v
        if int(f[out_].sum() - f[in_].sum()) != int(surplus[v]):
            problems.append(f"car balance violated at station {v}")
        if int(F[out_].sum()) != int(F[in_].sum()):
            problems.append(f"driver conservation violated at station {v}")
    starts = int(F[net.klass == START].sum())
    sinks = int(F[net.klass == SINK].sum())
    if starts != sinks or starts > instance.k:
        problems.append(f"{starts} drivers leave and {sinks} return, k = {instance.k}")
    return problems


@dataclass
class AggregatedModel:
    program: IntegerProgram
    f_vars: np.ndarray
    F_vars: np.ndarray


def formulate_aggregated(net: AggregatedNetwork, instance: Instance,
                         cuts: Sequence[int] = (), *, strengthen: bool = True) -> AggregatedModel:
    """The step-one integer program.

    At most ``k`` drivers leave the depot (at least one when any task
    exists); each entry of ``cuts`` adds ``sum(w * F) >= cut``.  With
    ``strengthen`` set, the cars of a set of overfull stations must leave it
    (and those of a set of underfull stations enter it) on at least
    ``ceil(|x(S)| / L)`` convoys.  These rows only tighten the LP relaxation.
    """
    A = net.n_arcs
    L, k = instance.L, instance.k
    prog = IntegerProgram("relocation_aggregated")
    depot_arc = (net.klass == START) | (net.klass == SINK)
    for a in range(A):
        prog.add_var(f"f_{a}", 0, 0 if depot_arc[a] else math.inf)
    for a in range(A):
        prog.add_var(f"F_{a}", 0, k if depot_arc[a] else math.inf, priority=1)
    f_vars = np.arange(A)
    F_vars = np.arange(A, 2 * A)

    surplus = instance.surplus
    for v in net.stations:
        out_arcs = np.flatnonzero(net.src == v).tolist()
        in_arcs = np.flatnonzero(net.dst == v).tolist()
        car = {a: 1 for a in out_arcs}
        drv = {A + a: 1 for a in out_arcs}
        for a in in_arcs:
            car[a] = car.get(a, 0) - 1
            drv[A + a] = drv.get(A + a, 0) - 1
        prog.add_constraint(car, Relation.EQ, int(surplus[v]), f"car_bal_{v}")
        prog.add_constraint(drv, Relation.EQ, 0, f"drv_bal_{v}")
    starts = [A + int(a) for a in net.arcs_of(START)]
    sinks = [A + int(a) for a in net.arcs_of(SINK)]
    if starts:
        balance = {a: 1 for a in starts}
        balance.update({a: -1 for a in sinks})
        prog.add_constraint(balance, Relation.EQ, 0, "depot_bal")
        prog.add_constraint({a: 1 for a in starts}, Relation.LE, k, "drivers_max")
        prog.add_constraint({a: 1 for a in starts}, Relation.GE, 1, "drivers_min")
    for a in net.relocation_arcs.tolist():
        prog.add_constraint({a: 1, A + a: -L}, Relation.LE, 0, f"couple_{a}")
    if strengthen:
        _add_cut_sets(prog, net, instance)
    objective = {A + a: int(net.weight[a]) for a in range(A)}
    for i, rhs in enumerate(cuts):
        prog.add_constraint(dict(objective), Relation.GE, int(rhs), f"objective_cut_{i}")
    prog.set_objective(objective)
    return AggregatedModel(prog, f_vars, F_vars)


def _add_cut_sets(prog: IntegerProgram, net: AggregatedNetwork, instance: Instance) -> None:
    A = net.n_arcs
    surplus = instance.surplus
    for group in task_groups(instance):
        inside = np.isin(net.src, group), np.isin(net.dst, group)
        x = int(surplus[list(group)].sum())
        crossing = inside[0] & ~inside[1] if x > 0 else inside[1] & ~inside[0]
        need = -(-abs(x) // instance.L)
        prog.add_constraint({A + int(a): 1 for a in np.flatnonzero(crossing)}, Relation.GE, need,
                            "cut_" + "_".join(map(str, group)))


def _minimal_car_flow(net: AggregatedNetwork, instance: Instance, F: np.ndarray,
                      limits: SolveLimits | None, backend: str) -> np.ndarray:
    """Re-route the cars with the driver flow fixed, minimising car-distance.

    With ``F`` fixed the remaining problem is a network flow with integral
    capacities, so its LP optimum is already integral.  Minimal car flows
    carry no circulation, which the cycle repair relies on.
    """
    model = formulate_aggregated(net, instance)
    prog = model.program
    for a in range(net.n_arcs):
        var = prog.variables[int(model.F_vars[a])]
        var.lb = var.ub = int(F[a])
    prog.set_objective({int(model.f_vars[a]): int(net.weight[a]) for a in range(net.n_arcs)})
    sol = mip_solve(prog, limits, backend=backend)
    if not sol.status.has_solution:
        raise CorruptFlow(f"car re-routing failed with status {sol.status.value}")
    return np.rint(sol.x[model.f_vars]).astype(np.int64)


def _walk_loads(walk: Sequence[int], need: dict[int, int], overfull: frozenset[int], L: int) -> list[int] | None:
    """Convoy size on each leg leaving the stations of ``walk``, or None if tasks stay open.

    The driver takes as many cars as fit at overfull stations and drops as
    many as are missing at underfull ones.
    """
    left = dict(need)
    load = 0
    loads = []
    for prev, v in zip((None, *walk), walk):
        if v == prev:
            return None
        if v in overfull:
            take = min(L - load, left[v])
            left[v] -= take
            load += take
        else:
            drop = min(load, left[v])
            left[v] -= drop
            load -= drop
        loads.append(load)
    if not walk or walk[0] not in overfull or walk[-1] in overfull or any(left.values()):
        return None
    return loads


def _improve_walk(walk: list[int], cost: Callable[[list[int]], int], ok: Callable[[list[int]], bool]
                  ) -> list[int]:
    """First-improvement local search: drop a visit, move a visit, reverse a stretch."""
    best = cost(walk)
    improved = True
    while improved:
        improved = False
        n = len(walk)
        for i in range(n):
            rest = walk[:i] + walk[i + 1:]
            candidates = [rest] + [rest[:j] + [walk[i]] + rest[j:] for j in range(n) if j != i]
            candidates += [walk[:i] + walk[i:j + 1][::-1] + walk[j + 1:] for j in range(i + 1, n)]
            for cand in candidates:
                c = cost(cand)
                if c < best and ok(cand):
                    walk, best, improved = cand, c, True
                    break
            if improved:
                break
    return walk


def greedy_flow(net: AggregatedNetwork, instance: Instance) -> AggregatedFlow:
    """A feasible aggregated flow from one convoy walk, used as a first incumbent for step one.

    Walks are built nearest-neighbour style from each overfull station (fill
    up, unload at the nearest underfull stations, move on to the nearest
    overfull station with cars left) and shortened by local search; the
    shortest one wins.
    """
    dist = instance.metric.dist
    L, depot = instance.L, net.depot
    need = {v: abs(int(instance.surplus[v])) for v in net.stations}
    overfull = frozenset(net.overfull)

    def cost(w: list[int]) -> int:
        stops = [depot, *w, depot]
        return int(sum(dist[u, v] for u, v in zip(stops, stops[1:])))

    def feasible(w: list[int]) -> bool:
        return _walk_loads(w, need, overfull, L) is not None

    def nearest_neighbour(first: int) -> list[int]:
        left = dict(need)
        walk: list[int] = []
        here = first
        while True:
            walk.append(here)
            load = min(L, left[here])
            left[here] -= load
            while load:
                here = min((v for v in net.underfull if left[v] > 0), key=lambda v: (dist[here, v], v))
                walk.append(here)
                drop = min(load, left[here])
                left[here] -= drop
                load -= drop
            rest = [o for o in net.overfull if left[o] > 0]
            if not rest:
                return walk
            here = min(rest, key=lambda v: (dist[here, v], v))

    walks = [_improve_walk(nearest_neighbour(o), cost, feasible) for o in net.overfull]
    walk = min(walks, key=lambda w: (cost(w), w))
    loads = _walk_loads(walk, need, overfull, L)

    arc_of = {(int(net.src[a]), int(net.dst[a])): a
              for a in range(net.n_arcs) if net.klass[a] not in (START, SINK)}
    f = np.zeros(net.n_arcs, dtype=np.int64)
    F = np.zeros(net.n_arcs, dtype=np.int64)
    F[int(np.flatnonzero((net.klass == START) & (net.dst == walk[0]))[0])] += 1
    F[int(np.flatnonzero((net.klass == SINK) & (net.src == walk[-1]))[0])] += 1
    for (u, v), load in zip(zip(walk, walk[1:]), loads):
        a = arc_of[(u, v)]
        F[a] += 1
        f[a] += load
    return AggregatedFlow(f, F)


def solve_aggregated(net: AggregatedNetwork, instance: Instance, limits: SolveLimits | None = None,
                     extra_cuts: Sequence[int] = (), backend: str = "internal"
                     ) -> tuple[AggregatedFlow, MipSolution]:
    model = formulate_aggregated(net, instance, extra_cuts)
    if net.stations:
        start = greedy_flow(net, instance)
        if net.cost(start.F) >= max(extra_cuts, default=0):
            x = np.zeros(model.program.n_vars, dtype=np.int64)
            x[model.f_vars], x[model.F_vars] = start.f, start.F
            model.program.set_start(x.tolist())
    sol = mip_solve(model.program, limits, backend=backend)
    if sol.status is Status.INFEASIBLE:
        raise HeuristicFailed("aggregated model infeasible" + (" under the objective cuts" if extra_cuts else ""))
    if not sol.status.has_solution:
        raise HeuristicFailed(f"no integer aggregated flow found ({sol.status.value}: {sol.message})")
    x = np.rint(sol.x).astype(np.int64)
    F = x[model.F_vars]
    f = _minimal_car_flow(net, instance, F, limits, backend)
    flow = AggregatedFlow(f, F)
    problems = check_aggregated_flow(net, flow, instance)
    if problems:
        raise CorruptFlow("; ".join(problems))
    return flow, sol


# --------------------------------------------------------------------------
# pre-tours
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PreMove:
    origin: int
    destination: int
    load: int
    arc: int


@dataclass(frozen=True)
class PreTour:
    moves: tuple[PreMove, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "moves", tuple(self.moves))

    def length(self, instance: Instance) -> int:
        return sum(instance.d(m.origin, m.destination) for m in self.moves)


@dataclass(frozen=True)
class IsolatedCycle:
    """A closed walk untouched by any pre-tour, rotated to end on an empty arc."""

    moves: tuple[PreMove, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "moves", tuple(self.moves))

    @property
    def path(self) -> tuple[PreMove, ...]:
        """The walk without its closing (empty) arc."""
        return self.moves[:-1]


class _Residual:
    def __init__(self, net: AggregatedNetwork, flow: AggregatedFlow, L: int):
        self.net = net
        self.L = L
        self.F = flow.F.copy()
        self.f = flow.f.copy()
        self.out: dict[int, list[int]] = defaultdict(list)
        for a in range(net.n_arcs):
            if net.klass[a] != START:
                self.out[int(net.src[a])].append(a)
        self.start = net.arcs_of(START).tolist()

    def best(self, arcs: list[int]) -> int | None:
        """Residual arc with cars first, then the lowest destination id."""
        best = None
        for a in arcs:
            if self.F[a] <= 0:
                continue
            key = (self.f[a] <= 0, int(self.net.dst[a]), a)
            if best is None or key < best[0]:
                best = (key, a)
        return None if best is None else best[1]

    def take(self, a: int) -> PreMove:
        self.F[a] -= 1
        load = int(min(self.L, self.f[a]))
        self.f[a] -= load
        return PreMove(int(self.net.src[a]), int(self.net.dst[a]), load, a)

    def walk_from_source(self) -> list[PreMove] | None:
        a = self.best(self.start)
        if a is None:
            return None
        moves = [self.take(a)]
        while self.net.klass[moves[-1].arc] != SINK:
            a = self.best(self.out[moves[-1].destination])
            if a is None:
                raise CorruptFlow(f"driver walk stuck at station {moves[-1].destination}")
            moves.append(self.take(a))
        return moves

    def closed_walk(self, v: int) -> list[PreMove]:
        """Follow residual non-depot arcs from ``v`` until the walk returns to ``v``."""
        moves: list[PreMove] = []
        node = v
        while True:
            arcs = [a for a in self.out[node] if self.net.klass[a] != SINK]
            a = self.best(arcs)
            if a is None:
                if node != v or not moves:
                    raise CorruptFlow(f"leftover driver flow is not a circulation (stuck at {node})")
                return moves
            moves.append(self.take(a))
            node = moves[-1].destination
            if node == v and self.best([b for b in self.out[v] if self.net.klass[b] != SINK]) is None:
                return moves

    def has_out(self, v: int) -> bool:
        return any(self.F[a] > 0 for a in self.out[v] if self.net.klass[a] != SINK)


def _splice(moves: list[PreMove], res: _Residual) -> list[PreMove]:
    """Insert leftover closed walks at every station the walk passes (Hierholzer style)."""
    i = 0
    while i < len(moves):
        v = moves[i].destination
        if res.has_out(v):
            loop = res.closed_walk(v)
            moves[i + 1:i + 1] = loop
            continue
        i += 1
    return moves


def _rotate_cycle(moves: list[PreMove], surplus: np.ndarray) -> IsolatedCycle:
    def rank(m: PreMove) -> int:
        if m.load:
            return 2
        return 0 if surplus[m.origin] < 0 and surplus[m.destination] > 0 else 1

    best = min(range(len(moves)), key=lambda j: (rank(moves[j]), j))
    if moves[best].load:
        raise CorruptFlow("isolated cycle carries cars on every arc; car flow is not minimal")
    rotated = moves[best + 1:] + moves[:best + 1]
    return IsolatedCycle(tuple(rotated))


def extract_pre_tours(flow: AggregatedFlow, net: AggregatedNetwork, instance: Instance
                      ) -> tuple[list[PreTour], list[IsolatedCycle]]:
    """Decompose the driver flow into depot-to-depot pre-tours and isolated cycles."""
    res = _Residual(net, flow, instance.L)
    walks: list[list[PreMove]] = []
    while (walk := res.walk_from_source()) is not None:
        walks.append(walk)
    # leftover circulation touching a pre-tour is absorbed into it
    changed = True
    while changed:
        changed = False
        for walk in walks:
            before = len(walk)
            _splice(walk, res)
            changed |= len(walk) != before

    cycles = []
    surplus = instance.surplus
    for v in net.stations:
        while res.has_out(v):
            cycles.append(_rotate_cycle(_splice(res.closed_walk(v), res), surplus))
    if np.any(res.F) or np.any(res.f):
        raise CorruptFlow("flow left over after the pre-tour decomposition")
    return [PreTour(tuple(w)) for w in walks], cycles


def aggregate_pre_tours(pre_tours: Sequence[PreTour], cycles: Sequence[IsolatedCycle],
                        net: AggregatedNetwork) -> AggregatedFlow:
    f = np.zeros(net.n_arcs, dtype=np.int64)
    F = np.zeros(net.n_arcs, dtype=np.int64)
    for item in [*pre_tours, *cycles]:
        for m in item.moves:
            F[m.arc] += 1
            f[m.arc] += m.load
    return AggregatedFlow(f, F)


# --------------------------------------------------------------------------
# precedences
# --------------------------------------------------------------------------

MoveRef = tuple[int, int]  # (pre-tour index, move index)


@dataclass(frozen=True)
class Junction:
    """Net load change of a pre-tour at a station between two consecutive pre-moves."""

    station: int
    amount: int  # > 0 drop, < 0 pickup
    move: MoveRef  # the dropping move, or the picking-up move


def junctions(pre_tours: Sequence[PreTour]) -> list[Junction]:
    out = []
    for t, tour in enumerate(pre_tours):
        moves = tour.moves
        for i in range(len(moves) - 1):
            delta = moves[i].load - moves[i + 1].load
            if delta > 0:
                out.append(Junction(moves[i].destination, delta, (t, i)))
            elif delta < 0:
                out.append(Junction(moves[i + 1].origin, delta, (t, i + 1)))
        if moves and moves[-1].load:
            out.append(Junction(moves[-1].destination, moves[-1].load, (t, len(moves) - 1)))
    return out


@dataclass
class PrecedenceGraph:
    """Cross-tour edges ``drop move -> pickup move`` at stations with a task."""

    edges: list[tuple[MoveRef, MoveRef]] = field(default_factory=list)

    def predecessors(self) -> dict[MoveRef, list[MoveRef]]:
        pred: dict[MoveRef, list[MoveRef]] = defaultdict(list)
        for a, b in self.edges:
            pred[b].append(a)
        return pred

    def topological_order(self, pre_tours: Sequence[PreTour]) -> list[MoveRef] | None:
        """Moves ordered consistently with tour order and the edges, or ``None`` on a cycle."""
        succ: dict[MoveRef, list[MoveRef]] = defaultdict(list)
        indeg: dict[MoveRef, int] = {}
        for t, tour in enumerate(pre_tours):
            for i in range(len(tour.moves)):
                indeg[(t, i)] = 0 if i == 0 else 1
                if i:
                    succ[(t, i - 1)].append((t, i))
        for a, b in self.edges:
            succ[a].append(b)
            indeg[b] += 1
        heap = [ref for ref, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            ref = heapq.heappop(heap)
            order.append(ref)
            for nxt in succ[ref]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(heap, nxt)
        return order if len(order) == len(indeg) else None

    def is_acyclic(self, pre_tours: Sequence[PreTour]) -> bool:
        return self.topological_order(pre_tours) is not None


def build_precedences(pre_tours: Sequence[PreTour], instance: Instance) -> PrecedenceGraph:
    """A drop must precede every pickup of another pre-tour at the same overfull or underfull station."""
    surplus = instance.surplus
    drops: dict[int, list[MoveRef]] = defaultdict(list)
    picks: dict[int, list[MoveRef]] = defaultdict(list)
    for j in junctions(pre_tours):
        if surplus[j.station] == 0:
            continue
        (drops if j.amount > 0 else picks)[j.station].append(j.move)
    edges = []
    for v in sorted(drops):
        for d in drops[v]:
            edges.extend((d, p) for p in picks.get(v, ()) if p[0] != d[0])
    return PrecedenceGraph(edges)


# --------------------------------------------------------------------------
# waiting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WaitDecision:
    until: int | None  # None: no waiting needed
    chosen: tuple[int, ...]


def compute_waiting(load: int, predecessors: Sequence[tuple[int, int]], cars_at_origin: int) -> WaitDecision:
    """Pick the preceding drops a pickup of ``load`` cars waits for.

    ``predecessors`` holds ``(arrival, cars)`` pairs.  The chosen set must
    bring ``cars_at_origin + sum(cars) >= load``; among those it minimises
    the latest arrival, then the number of drops, then the cars claimed,
    then the sorted index tuple.
    """
    need = load - cars_at_origin
    if need <= 0:
        return WaitDecision(None, ())
    arrivals = np.array([p[0] for p in predecessors], dtype=np.int64)
    cars = np.array([p[1] for p in predecessors], dtype=np.int64)
    if cars.sum() < need:
        raise InfeasiblePrecedence(f"{int(cars.sum())} preceding cars cannot cover a shortfall of {need}")

    until = None
    for tau in np.unique(arrivals):
        if cars[arrivals <= tau].sum() >= need:
            until = int(tau)
            break
    cand = np.flatnonzero(arrivals <= until)
    w = cars[cand]
    count = int(np.searchsorted(np.cumsum(np.sort(w)[::-1]), need) + 1)
    total = int(w.sum())
    reach = _kernels.suffix_subset_sums(w, count, total)
    best_sum = need + int(np.argmax(reach[0, count, need:]))
    chosen = []
    c, s = count, best_sum
    for i in range(cand.size):
        wi = int(w[i])
        if c and wi <= s and reach[i + 1, c - 1, s - wi]:
            chosen.append(int(cand[i]))
            c -= 1
            s -= wi
    return WaitDecision(until, tuple(chosen))


# --------------------------------------------------------------------------
# timing
# --------------------------------------------------------------------------

@dataclass
class _Drop:
    time: int
    remaining: int
    tour: int


def time_pre_tours(pre_tours: Sequence[PreTour], graph: PrecedenceGraph, instance: Instance) -> list[list[Move]]:
    """Departure and arrival times for every pre-move; inserts waiting moves where a pickup must wait.

    Moves are handled in a topological order of tour order plus precedences.
    A pickup first claims untouched initial stock, then earlier drops of its
    own tour, then the drops selected by :func:`compute_waiting`.
    """
    order = graph.topological_order(pre_tours)
    if order is None:
        raise HeuristicFailed("precedence relation is cyclic")
    dist = instance.metric.dist
    stock = list(instance.z0)
    drops: dict[int, list[_Drop]] = defaultdict(list)
    arrival: dict[MoveRef, int] = {}
    departure: dict[MoveRef, int] = {}

    for t, i in order:
        moves = pre_tours[t].moves
        m = moves[i]
        ready = arrival[(t, i - 1)] if i else 0
        prev_load = moves[i - 1].load if i else 0
        need = m.load - prev_load
        if need > 0:
            v = m.origin
            own = [d for d in drops[v] if d.tour == t and d.remaining > 0]
            other = [d for d in drops[v] if d.tour != t and d.remaining > 0]
            at_origin = stock[v] + sum(d.remaining for d in own)
            decision = compute_waiting(need, [(d.time, d.remaining) for d in other], at_origin)
            take = min(stock[v], need)
            stock[v] -= take
            need -= take
            for d in own + [other[j] for j in decision.chosen]:
                take = min(d.remaining, need)
                d.remaining -= take
                need -= take
            if decision.until is not None:
                ready = max(ready, decision.until)
        departure[(t, i)] = ready
        arrival[(t, i)] = ready + int(dist[m.origin, m.destination])
        next_load = moves[i + 1].load if i + 1 < len(moves) else 0
        if m.load > next_load:
            drops[m.destination].append(_Drop(arrival[(t, i)], m.load - next_load, t))

    timed = []
    for t, tour in enumerate(pre_tours):
        driver = t + 1
        out: list[Move] = []
        for i, m in enumerate(tour.moves):
            dep = departure[(t, i)]
            if i and dep > arrival[(t, i - 1)]:
                prev = tour.moves[i - 1]
                out.append(Move(driver, m.origin, m.origin, arrival[(t, i - 1)], dep, min(prev.load, m.load)))
            out.append(Move(driver, m.origin, m.destination, dep, arrival[(t, i)], m.load))
        timed.append(out)
    return timed


def assemble_schedule(timed: Sequence[list[Move]], instance: Instance) -> TransportationSchedule:
    tours = [Tour(d + 1, tuple(moves)) for d, moves in enumerate(timed)]
    tours += [waiting_tour(d, instance.depot, instance.T) for d in range(len(timed) + 1, instance.k + 1)]
    return TransportationSchedule(tours)


# --------------------------------------------------------------------------
# isolated cycles
# --------------------------------------------------------------------------

def handle_isolated_cycles(schedule: TransportationSchedule, cycles: Sequence[IsolatedCycle],
                           instance: Instance) -> TransportationSchedule:
    """Graft each cycle onto the last travelling tour, just before it returns to the depot."""
    if not cycles:
        return schedule
    tours = list(schedule.tours)
    target = max((i for i, t in enumerate(tours) if any(not m.is_waiting for m in t.moves)), default=None)
    if target is None:
        raise HeuristicFailed("no travelling tour to attach an isolated cycle to")
    dist = instance.metric.dist
    tour = tours[target]
    moves = list(tour.moves)
    for cycle in cycles:
        last = moves.pop()
        while last.is_waiting:
            last = moves.pop()
        t, here = last.departure, last.origin
        path = cycle.path
        legs = [(here, path[0].origin, 0)] if here != path[0].origin else []
        legs += [(m.origin, m.destination, m.load) for m in path]
        legs.append((path[-1].destination, last.destination, 0))
        for a, b, load in legs:
            moves.append(Move(tour.driver, a, b, t, t + int(dist[a, b]), load))
            t += int(dist[a, b])
    tours[target] = Tour(tour.driver, tuple(moves))
    return TransportationSchedule(tours)


# --------------------------------------------------------------------------
# cut and resolve
# --------------------------------------------------------------------------

StepSolver = Callable[[tuple[int, ...]], tuple[AggregatedFlow, MipSolution]]


@dataclass
class CutResolveResult:
    flow: AggregatedFlow
    solution: MipSolution
    first_solution: MipSolution
    pre_tours: list[PreTour]
    cycles: list[IsolatedCycle]
    precedences: PrecedenceGraph
    cuts: list[int]
    objectives: list[int]

    @property
    def rounds(self) -> int:
        return len(self.cuts)


def cut_and_resolve(instance: Instance, limits: SolveLimits | None = None, *, backend: str = "internal",
                    step: StepSolver | None = None, max_rounds: int = 10,
                    net: AggregatedNetwork | None = None) -> CutResolveResult:
    """Re-solve with ``sum(w * F) >= previous + 1`` until the precedences are acyclic.

    ``step`` replaces the aggregated solve; it receives the current cut
    right-hand sides.
    """
    net = net or build_aggregated(instance)
    if step is None:
        def step(cuts: tuple[int, ...]) -> tuple[AggregatedFlow, MipSolution]:
            return solve_aggregated(net, instance, limits, cuts, backend)

    cuts: list[int] = []
    objectives: list[int] = []
    first = None
    while True:
        flow, sol = step(tuple(cuts))
        first = first or sol
        objective = net.cost(flow.F)
        objectives.append(objective)
        pre_tours, cycles = extract_pre_tours(flow, net, instance)
        graph = build_precedences(pre_tours, instance)
        if graph.is_acyclic(pre_tours):
            return CutResolveResult(flow, sol, first, pre_tours, cycles, graph, cuts, objectives)
        if len(cuts) >= max_rounds:
            raise HeuristicFailed(f"precedences still cyclic after {len(cuts)} cut rounds; "
                                  f"objectives {objectives}")
        log.info("cyclic precedences at objective %d; adding a cut", objective)
        cuts.append(objective + 1)


# --------------------------------------------------------------------------
# overlong tours
# --------------------------------------------------------------------------

def split_overlong_tours(schedule: TransportationSchedule, instance: Instance
                         ) -> tuple[TransportationSchedule, list[int]]:
    """Hand the tail of each tour that overruns ``T`` to an idle driver, when that stays valid.

    A tour is split after a move that ends at an empty convoy and from which
    the driver still gets back to the depot by ``T``; the idle driver drives
    out to that station and runs the rest, shifted as early as the validator
    allows.  Returns the new schedule and the drivers whose tours were split.
    """
    dist = instance.metric.dist
    depot, T = instance.depot, instance.T
    tours = list(schedule.tours)
    idle = [i for i, t in enumerate(tours) if all(m.is_waiting for m in t.moves)]
    done = []
    for i, tour in enumerate(list(tours)):
        if tour.end_time <= T or not idle:
            continue
        moves = tour.moves
        best = None
        for j in range(len(moves) - 2, -1, -1):
            m, nxt = moves[j], moves[j + 1]
            if m.is_waiting or m.destination == depot or m.load or nxt.load:
                continue
            if m.arrival + dist[m.destination, depot] <= T:
                best = j
                break
        if best is None:
            continue
        v = moves[best].destination
        head = list(moves[:best + 1]) + [Move(tour.driver, v, depot, moves[best].arrival,
                                              moves[best].arrival + int(dist[v, depot]), 0)]
        rest = moves[best + 1:]
        helper = tours[idle[0]].driver
        reach = int(dist[depot, v])
        for shift in range(max(rest[0].departure - reach, 0), -1, -1):
            tail = [Move(helper, depot, v, rest[0].departure - shift - reach, rest[0].departure - shift, 0)]
            tail += [Move(helper, m.origin, m.destination, m.departure - shift, m.arrival - shift, m.load)
                     for m in rest]
            trial = list(tours)
            trial[i] = Tour(tour.driver, tuple(head))
            trial[idle[0]] = Tour(helper, tuple(tail))
            candidate = TransportationSchedule(trial)
            if validate_schedule(candidate, instance, check_horizon=False).ok:
                tours = trial
                idle.pop(0)
                done.append(tour.driver)
                break
    return TransportationSchedule(tours), done


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

@dataclass
class LiftFlowReport:
    lb: int | None
    total_length: int
    per_tour_lengths: list[int]
    horizon_violations: list[int]
    cut_rounds: int
    cycles_repaired: int
    step1_status: str

    def to_dict(self) -> dict:
        return {"lb": self.lb, "total_length": self.total_length,
                "per_tour_lengths": self.per_tour_lengths,
                "horizon_violations": self.horizon_violations, "cut_rounds": self.cut_rounds,
                "cycles_repaired": self.cycles_repaired, "step1_status": self.step1_status}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


@dataclass
class LiftFlowResult:
    schedule: TransportationSchedule
    lower_bound: int | None
    report: LiftFlowReport
    network: AggregatedNetwork
    resolve: CutResolveResult | None = None
    split_drivers: list[int] = field(default_factory=list)


def _lower_bound(sol: MipSolution) -> int | None:
    if sol.status is Status.OPTIMAL:
        return int(round(sol.objective_value))
    if sol.bound is None or not math.isfinite(sol.bound):
        return None
    return int(math.ceil(sol.bound - 1e-6))


def solve_liftflow(instance: Instance, limits: SolveLimits | None = None, *, backend: str = "internal",
                   split_overlong: bool = False, max_rounds: int = 10,
                   step: StepSolver | None = None) -> LiftFlowResult:
    net = build_aggregated(instance)
    if not net.stations:
        schedule = assemble_schedule([], instance)
        report = LiftFlowReport(0, 0, schedule.per_tour_lengths(instance), [], 0, 0, Status.OPTIMAL.value)
        return LiftFlowResult(schedule, 0, report, net)

    res = cut_and_resolve(instance, limits, backend=backend, step=step, max_rounds=max_rounds, net=net)
    timed = time_pre_tours(res.pre_tours, res.precedences, instance)
    schedule = handle_isolated_cycles(assemble_schedule(timed, instance), res.cycles, instance)
    split: list[int] = []
    if split_overlong:
        schedule, split = split_overlong_tours(schedule, instance)
    lb = _lower_bound(res.first_solution)
    report = LiftFlowReport(
        lb=lb,
        total_length=schedule.total_length(instance),
        per_tour_lengths=schedule.per_tour_lengths(instance),
        horizon_violations=schedule.horizon_violations(instance.T),
        cut_rounds=res.rounds,
        cycles_repaired=len(res.cycles),
        step1_status=res.first_solution.status.value,
    )
    return LiftFlowResult(schedule, lb, report, net, res, split)
