from __future__ import annotations

import itertools
from collections import deque

import numpy as np
import pytest

from relocate.generator import GenParams, generate
from relocate.instance import Instance
from relocate.liftflow import (CONNECTION, SINK, START, AggregatedFlow, _walk_loads, HeuristicFailed,
                               InfeasiblePrecedence, ModelDegenerate, PreMove, PreTour,
                               aggregate_pre_tours, assemble_schedule, build_aggregated,
                               build_precedences, check_aggregated_flow, compute_waiting,
                               cut_and_resolve, extract_pre_tours, greedy_flow, handle_isolated_cycles,
                               solve_aggregated, solve_liftflow, time_pre_tours)
from relocate.mip import MipSolution, Status
from relocate.schedule import dumps_schedule, simulate_states, validate_schedule

from conftest import aggregated_flow, cyclic_fixture, line_instance, waiting_oracle


# --------------------------------------------------------------------------
# network and step one
# --------------------------------------------------------------------------

def test_one_pair_arc_classes(line3) -> None:
    net = build_aggregated(line3)
    counts = net.class_counts()
    assert counts == {"start": 1, "overfull": 0, "connection": 2, "underfull": 0, "sink": 1}
    assert len(net.relocation_arcs) == 2


def test_balanced_network_is_empty(balanced) -> None:
    net = build_aggregated(balanced)
    assert net.overfull == () and net.underfull == () and net.n_arcs == 0
    res = solve_liftflow(balanced)
    assert res.lower_bound == 0
    assert res.schedule.total_length(balanced) == 0
    assert len(validate_schedule(res.schedule, balanced)) == 0


@pytest.mark.parametrize("seed", range(5))
def test_class_counts_closed_form(seed: int) -> None:
    rng = np.random.default_rng(seed)
    o, u = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    inst = generate(GenParams(15, o, u, T=40, L=3, k=2, seed=seed))
    counts = build_aggregated(inst).class_counts()
    assert counts == {"start": o, "overfull": o * (o - 1), "connection": 2 * o * u,
                      "underfull": u * (u - 1), "sink": u}


def test_depot_with_task_is_degenerate(line3) -> None:
    inst = line_instance([0, 1, 2], [1, 0, 0], [0, 0, 1], depot=0)
    with pytest.raises(ModelDegenerate):
        build_aggregated(inst)


def test_coupling_forces_ceiling() -> None:
    inst = line_instance([0, 10, 20], [0, 7, 0], [0, 0, 7], depot=0, k=3, L=5, T=100)
    net = build_aggregated(inst)
    flow, sol = solve_aggregated(net, inst)
    conn = [a for a in net.arcs_of(CONNECTION) if net.src[a] == 1]
    assert flow.F[conn].tolist() == [2]
    # the second convoy over 1 -> 2 needs a driver back at 1: start, 2x connection, return, sink
    assert sol.objective_value == 10 + 2 * 10 + 10 + 20


def _max_flow(n: int, cap: dict[tuple[int, int], int], s: int, t: int) -> int:
    residual: dict[tuple[int, int], int] = dict(cap)
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for (a, b) in cap:
        adj[a].add(b)
        adj[b].add(a)
        residual.setdefault((b, a), 0)
    total = 0
    while True:
        prev = {s: s}
        queue = deque([s])
        while queue and t not in prev:
            a = queue.popleft()
            for b in adj[a]:
                if b not in prev and residual[(a, b)] > 0:
                    prev[b] = a
                    queue.append(b)
        if t not in prev:
            return total
        path = []
        b = t
        while b != s:
            path.append((prev[b], b))
            b = prev[b]
        push = min(residual[e] for e in path)
        for a, b in path:
            residual[(a, b)] -= push
            residual[(b, a)] += push
        total += push


def _enumerated_optimum(inst: Instance, bound: int) -> int:
    """Cheapest driver flow with every arc in ``0..bound`` that admits a car flow."""
    net = build_aggregated(inst)
    surplus = inst.surplus
    n = inst.n
    source, sink = n, n + 1
    best = None
    for F in itertools.product(range(bound + 1), repeat=net.n_arcs):
        F = np.array(F)
        starts = F[net.klass == START].sum()
        if not 1 <= starts <= inst.k or starts != F[net.klass == SINK].sum():
            continue
        if any(F[net.src == v].sum() != F[net.dst == v].sum() for v in net.stations):
            continue
        cap = {}
        for a in net.relocation_arcs:
            key = (int(net.src[a]), int(net.dst[a]))
            cap[key] = cap.get(key, 0) + inst.L * int(F[a])
        for v in net.overfull:
            cap[(source, v)] = int(surplus[v])
        for v in net.underfull:
            cap[(v, sink)] = int(-surplus[v])
        if _max_flow(n + 2, cap, source, sink) < int(surplus[surplus > 0].sum()):
            continue
        cost = net.cost(F)
        best = cost if best is None else min(best, cost)
    return best


@pytest.mark.parametrize("z0, zT, L", [
    ([0, 3, 0, 0], [0, 0, 1, 2], 2),
    ([0, 2, 0, 0], [0, 0, 1, 1], 1),
    ([0, 0, 4, 0], [0, 1, 0, 3], 3),
])
def test_step_one_matches_bounded_enumeration(z0, zT, L) -> None:
    inst = line_instance([0, 3, 5, 9], z0, zT, depot=0, k=1, L=L, T=60)
    net = build_aggregated(inst)
    flow, sol = solve_aggregated(net, inst)
    assert flow.F.max() <= 2
    assert sol.objective_value == _enumerated_optimum(inst, 2)


# --------------------------------------------------------------------------
# pre-tours and precedences
# --------------------------------------------------------------------------

def test_single_connection_gives_three_pre_moves() -> None:
    inst = line_instance([0, 2, 5], [0, 2, 0], [0, 0, 2], depot=0, k=1, L=2, T=20)
    net = build_aggregated(inst)
    flow, _ = solve_aggregated(net, inst)
    pre_tours, cycles = extract_pre_tours(flow, net, inst)
    assert cycles == []
    assert len(pre_tours) == 1
    assert [(m.origin, m.destination, m.load) for m in pre_tours[0].moves] == [(0, 1, 0), (1, 2, 2), (2, 0, 0)]
    assert build_precedences(pre_tours, inst).edges == []


def _cycle_instance() -> Instance:
    # pair (1, 2) is served from the depot; pair (3, 4) only by a closed walk
    return line_instance([0, 2, 4, 7, 8], [0, 1, 0, 2, 0], [0, 0, 1, 0, 2], depot=0, k=1, L=2, T=60)


def _cycle_flow(net) -> AggregatedFlow:
    return aggregated_flow(net, {(0, 1): (1, 0), (1, 2): (1, 1), (2, 0): (1, 0), (3, 4): (1, 2), (4, 3): (1, 0)})


def test_untouched_two_cycle_is_isolated() -> None:
    inst = _cycle_instance()
    net = build_aggregated(inst)
    flow = _cycle_flow(net)
    assert check_aggregated_flow(net, flow, inst) == []
    pre_tours, cycles = extract_pre_tours(flow, net, inst)
    assert len(pre_tours) == 1 and len(cycles) == 1
    assert [(m.origin, m.destination, m.load) for m in cycles[0].moves] == [(3, 4, 2), (4, 3, 0)]
    assert aggregate_pre_tours(pre_tours, cycles, net) == flow


def test_cycle_graft_extends_last_tour() -> None:
    inst = _cycle_instance()
    net = build_aggregated(inst)
    pre_tours, cycles = extract_pre_tours(_cycle_flow(net), net, inst)
    graph = build_precedences(pre_tours, inst)
    schedule = assemble_schedule(time_pre_tours(pre_tours, graph, inst), inst)
    assert handle_isolated_cycles(schedule, [], inst) is schedule
    grafted = handle_isolated_cycles(schedule, cycles, inst)
    legs = [(m.origin, m.destination, m.load) for m in grafted.tours[-1].moves]
    assert legs == [(0, 1, 0), (1, 2, 1), (2, 3, 0), (3, 4, 2), (4, 0, 0)]
    # 2 + 2 to serve the first pair, then 3 + 1 + 8 for the detour and the way home
    assert grafted.total_length(inst) == 16
    assert len(validate_schedule(grafted, inst, check_horizon=False)) == 0


def test_walk_loads_fill_and_empty() -> None:
    need = {1: 3, 2: 2, 3: 4, 4: 1}
    over = frozenset({1, 2})
    # L = 2: take 2 at 1, drop at 3; take 1 more at 1 and 1 at 2, drop 2 at 3; take 1 at 2, drop at 4
    assert _walk_loads([1, 3, 1, 2, 3, 2, 4], need, over, 2) == [2, 0, 1, 2, 0, 1, 0]
    assert _walk_loads([1, 3, 2, 4], need, over, 2) is None  # cars left behind
    assert _walk_loads([1, 1, 3], {1: 1, 3: 1}, frozenset({1}), 2) is None  # no arc from a station to itself


@pytest.mark.parametrize("seed", range(6))
def test_greedy_start_is_feasible_and_not_below_optimum(seed: int) -> None:
    inst = generate(GenParams(9, 3, 3, T=40, L=2 + seed % 2, k=2, seed=seed))
    net = build_aggregated(inst)
    start = greedy_flow(net, inst)
    assert check_aggregated_flow(net, start, inst) == []
    _, sol = solve_aggregated(net, inst)
    assert sol.status is Status.OPTIMAL
    assert net.cost(start.F) >= sol.objective_value


@pytest.mark.parametrize("seed", range(6))
def test_pre_tours_reaggregate(seed: int) -> None:
    inst = generate(GenParams(12, 3, 4, T=40, L=3, k=3, seed=seed))
    net = build_aggregated(inst)
    flow, _ = solve_aggregated(net, inst)
    pre_tours, cycles = extract_pre_tours(flow, net, inst)
    assert aggregate_pre_tours(pre_tours, cycles, net) == flow
    for tour in pre_tours:
        assert net.klass[tour.moves[0].arc] == START and net.klass[tour.moves[-1].arc] == SINK


def _tour(*legs: tuple[int, int, int]) -> PreTour:
    return PreTour(tuple(PreMove(a, b, load, -1) for a, b, load in legs))


def test_drop_precedes_foreign_pickup() -> None:
    inst = line_instance([0, 1, 2, 3], [0, 1, 2, 0], [0, 0, 0, 3], depot=0, k=2, L=3, T=30)
    a = _tour((0, 1, 0), (1, 2, 1), (2, 3, 0), (3, 0, 0))   # drops 1 car at overfull station 2
    b = _tour((0, 2, 0), (2, 3, 3), (3, 0, 0))              # picks up 3 there
    assert build_precedences([a, b], inst).edges == [((0, 1), (1, 1))]
    assert build_precedences([b], inst).edges == []


def test_three_tour_rule_replay() -> None:
    # stations: 1, 2 overfull (+2 each), 3, 4 underfull (-2 each), 5 balanced
    inst = line_instance([0, 1, 2, 3, 4, 5], [0, 2, 2, 0, 0, 1], [0, 0, 0, 2, 2, 1],
                         depot=0, k=3, L=3, T=60)
    t0 = _tour((0, 1, 0), (1, 2, 2), (2, 3, 3), (3, 0, 0))       # pick 2 @1, pick 1 @2, drop 3 @3
    t1 = _tour((0, 2, 0), (2, 5, 1), (5, 4, 0), (4, 0, 0))       # pick 1 @2, drop 1 @5
    t2 = _tour((0, 3, 0), (3, 5, 1), (5, 4, 2), (4, 1, 0), (1, 0, 0))  # pick 1 @3, pick 1 @5, drop 2 @4
    # drops: t0 @3 (move 2), t1 @5 (move 1), t2 @4 (move 2)
    # pickups: t0 @1 (move 1), t0 @2 (move 2), t1 @2 (move 1), t2 @3 (move 1), t2 @5 (move 2)
    # Station 3 pairs a drop with a foreign pickup.  Station 5 does too but has
    # no task, and station 4 has no pickup.
    assert build_precedences([t0, t1, t2], inst).edges == [((0, 2), (2, 1))]


# --------------------------------------------------------------------------
# waiting
# --------------------------------------------------------------------------

def test_waiting_not_needed_with_stock() -> None:
    assert compute_waiting(3, [(5, 4)], 3).until is None


def test_waiting_for_single_predecessor() -> None:
    d = compute_waiting(3, [(12, 5)], 0)
    assert (d.until, d.chosen) == (12, (0,))


def test_waiting_prefers_early_big_drop() -> None:
    preds = [(10, 2), (20, 2), (4, 5)]
    d = compute_waiting(4, preds, 0)
    assert (d.until, d.chosen) == (4, (2,))
    assert waiting_oracle(4, preds, 0) == (4, (2,))


def test_waiting_matches_enumeration() -> None:
    rng = np.random.default_rng(0)
    for _ in range(200):
        size = int(rng.integers(1, 7))
        preds = [(int(rng.integers(0, 15)), int(rng.integers(1, 5))) for _ in range(size)]
        at_origin = int(rng.integers(0, 3))
        load = int(rng.integers(1, at_origin + sum(c for _, c in preds) + 1))
        d = compute_waiting(load, preds, at_origin)
        assert (d.until, d.chosen) == waiting_oracle(load, preds, at_origin)


def test_waiting_impossible_raises() -> None:
    with pytest.raises(InfeasiblePrecedence):
        compute_waiting(5, [(1, 2)], 1)


# --------------------------------------------------------------------------
# cut and resolve
# --------------------------------------------------------------------------

def test_cyclic_fixture_replays_to_a_two_cycle() -> None:
    inst, net, flow = cyclic_fixture()
    assert check_aggregated_flow(net, flow, inst) == []
    pre_tours, cycles = extract_pre_tours(flow, net, inst)
    assert cycles == []
    assert [[(m.origin, m.destination, m.load) for m in t.moves] for t in pre_tours] == [
        [(0, 2, 0), (2, 3, 3), (3, 1, 2), (1, 0, 0)],
        [(0, 3, 0), (3, 2, 3), (2, 4, 2), (4, 0, 0)],
    ]
    graph = build_precedences(pre_tours, inst)
    # tour 1 drops 1 at station 2 where tour 0 picks up; tour 0 drops 1 at 3 where tour 1 picks up
    assert graph.edges == [((1, 1), (0, 1)), ((0, 1), (1, 1))]
    assert not graph.is_acyclic(pre_tours)
    with pytest.raises(HeuristicFailed):
        time_pre_tours(pre_tours, graph, inst)


def test_cut_fires_once_on_cyclic_fixture() -> None:
    inst, net, fixture = cyclic_fixture()
    seen = []

    def step(cuts):
        seen.append(cuts)
        if not cuts:
            return fixture, MipSolution(Status.OPTIMAL, objective_value=float(net.cost(fixture.F)))
        return solve_aggregated(net, inst, extra_cuts=cuts)

    res = cut_and_resolve(inst, step=step, net=net)
    first = net.cost(fixture.F)
    assert res.rounds == 1
    assert seen == [(), (first + 1,)]
    assert res.objectives[0] == first
    assert res.objectives[1] >= first + 1
    assert res.precedences.is_acyclic(res.pre_tours)


def test_round_cap_raises() -> None:
    inst, net, fixture = cyclic_fixture()

    def step(cuts):
        return fixture, MipSolution(Status.OPTIMAL, objective_value=float(net.cost(fixture.F)))

    with pytest.raises(HeuristicFailed):
        cut_and_resolve(inst, step=step, net=net, max_rounds=3)


def test_acyclic_first_round_adds_no_cut() -> None:
    inst = generate(GenParams(10, 3, 3, T=40, L=3, k=2, seed=1))
    assert cut_and_resolve(inst).rounds == 0


# --------------------------------------------------------------------------
# end to end
# --------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_liftflow_schedule_is_feasible(seed: int) -> None:
    inst = generate(GenParams(12, 3, 4, T=40, L=3, k=3, seed=seed))
    res = solve_liftflow(inst)
    report = validate_schedule(res.schedule, inst, check_horizon=False)
    assert report.ok, report.to_dict()
    assert simulate_states(res.schedule, inst).final.tolist() == list(inst.zT)
    assert res.lower_bound <= res.schedule.total_length(inst)
    strict = validate_schedule(res.schedule, inst, check_horizon=True)
    assert ("horizon" in strict.codes()) == bool(res.report.horizon_violations)
    assert res.report.total_length == res.schedule.total_length(inst)


def test_liftflow_is_deterministic() -> None:
    inst = generate(GenParams(12, 3, 3, T=40, L=3, k=2, seed=3))
    assert dumps_schedule(solve_liftflow(inst).schedule) == dumps_schedule(solve_liftflow(inst).schedule)


def test_lower_bound_below_exact_on_tiny_instance() -> None:
    from relocate.ten import solve_exact

    inst = line_instance([0, 2, 3, 6], [0, 3, 0, 1], [0, 0, 4, 0], depot=0, k=2, L=2, T=20)
    exact = solve_exact(inst)
    lf = solve_liftflow(inst)
    assert exact.solution.status is Status.OPTIMAL
    assert lf.lower_bound <= exact.total_length <= lf.schedule.total_length(inst)


def test_split_overlong_keeps_schedule_valid() -> None:
    inst = generate(GenParams(12, 4, 4, T=30, L=2, k=3, seed=2))
    res = solve_liftflow(inst, split_overlong=True)
    assert validate_schedule(res.schedule, inst, check_horizon=False).ok
    late = res.schedule.horizon_violations(inst.T)
    assert not set(res.split_drivers) & set(late)
