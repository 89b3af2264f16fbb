"""Acceptance checks, one test per criterion.

Each test prints ``criterion N: PASS`` or ``criterion N: FAIL`` with a short
detail line; the lines are repeated in the pytest terminal summary.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

from relocate.cli import BenchConfig, format_table, run_suite
from relocate.generator import GenParams, generate
from relocate.instance import Instance, dumps_instance, loads_instance
from relocate.liftflow import (LiftFlowResult, aggregate_pre_tours, compute_waiting, cut_and_resolve,
                               solve_aggregated, solve_liftflow)
from relocate.mip import MipSolution, SolveLimits, Status
from relocate.schedule import brute_force_optimum, dumps_schedule, loads_schedule, validate_schedule
from relocate.ten import ExactResult, aggregate_schedule, solve_exact

from conftest import cyclic_fixture, random_tiny, record_verdict, waiting_oracle

pytestmark = pytest.mark.acceptance

CORPUS_SIZE = 200
CORPUS_EXACT_SECONDS = 5.0
# instances still open after the first pass get one longer attempt
CORPUS_RETRY_SECONDS = 60.0


def verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    record_verdict(line)
    assert ok, line


def corpus_params(count: int = CORPUS_SIZE) -> list[GenParams]:
    """Instances with 4 to 20 stations and horizons 20 to 40."""
    params = []
    for i in range(count):
        n = 4 + i % 17
        over = min(1 + (i // 17) % 3, (n - 1) // 2)
        under = max(1, min(over + i % 2, n - 1 - over))
        params.append(GenParams(n, over, under, T=20 + 5 * (i % 5), L=1 + i % 4, k=2 + (i // 4) % 3,
                                plane_size=4.0 + n / 4, surplus_range=(1, 3), seed=1000 + i))
    return params


@dataclass
class Solved:
    instance: Instance
    exact: ExactResult
    liftflow: LiftFlowResult
    exact_seconds: float


@pytest.fixture(scope="module")
def corpus() -> list[Solved]:
    """Every corpus instance solved both ways; the exact run starts from the LiftFlow schedule."""
    solved = []
    for params in corpus_params():
        inst = generate(params)
        lf = solve_liftflow(inst)
        start = time.monotonic()
        exact = solve_exact(inst, SolveLimits(time_limit=CORPUS_EXACT_SECONDS), start=lf.schedule)
        if exact.solution.status is Status.LIMIT_REACHED:
            exact = solve_exact(inst, SolveLimits(time_limit=CORPUS_RETRY_SECONDS), start=lf.schedule)
        seconds = time.monotonic() - start
        solved.append(Solved(inst, exact, lf, seconds))
    return solved


def test_criterion_1_exact_matches_brute_force() -> None:
    start = time.monotonic()
    compared = mismatches = 0
    for seed in range(60):
        inst = random_tiny(seed)
        oracle = brute_force_optimum(inst)
        res = solve_exact(inst)
        if oracle is None:
            mismatches += res.solution.status is not Status.INFEASIBLE
            continue
        compared += 1
        mismatches += res.solution.status is not Status.OPTIMAL or res.total_length != oracle[0]
    elapsed = time.monotonic() - start
    verdict(1, compared >= 50 and mismatches == 0 and elapsed < 300,
            f"{compared} feasible tiny instances, {mismatches} mismatches, {elapsed:.0f}s")


def test_criterion_2_exact_schedules_are_feasible(corpus) -> None:
    with_schedule = [s for s in corpus if s.exact.schedule is not None]
    bad = [s.instance.name for s in with_schedule
           if not validate_schedule(s.exact.schedule, s.instance, check_horizon=True).ok]
    infeasible = sum(s.exact.solution.status is Status.INFEASIBLE for s in corpus)
    open_ = len(corpus) - len(with_schedule) - infeasible
    # instances left open are not violations, but most of the corpus must be settled
    verdict(2, len(corpus) >= 200 and not bad and open_ <= len(corpus) // 10,
            f"{len(with_schedule)} exact schedules on {len(corpus)} instances, {len(bad)} invalid, "
            f"{infeasible} infeasible within T, {open_} without a schedule at the time limit")


def test_criterion_3_liftflow_schedules_are_feasible(corpus) -> None:
    bad = []
    unflagged = 0
    overruns = 0
    for s in corpus:
        sched, inst = s.liftflow.schedule, s.instance
        if not validate_schedule(sched, inst, check_horizon=False).ok:
            bad.append(inst.name)
        late = sched.horizon_violations(inst.T)
        overruns += bool(late)
        strict = validate_schedule(sched, inst, check_horizon=True)
        unflagged += s.liftflow.report.horizon_violations != late or ("horizon" in strict.codes()) != bool(late)
    verdict(3, not bad and unflagged == 0,
            f"{len(corpus)} LiftFlow schedules, {len(bad)} invalid, {overruns} overrun T, "
            f"{unflagged} overruns not flagged")


def test_criterion_4_lower_bound(corpus) -> None:
    above_exact = above_lf = proven = 0
    for s in corpus:
        lb = s.liftflow.lower_bound
        lf = s.liftflow.schedule.total_length(s.instance)
        above_lf += lb is None or lb > lf
        if s.exact.solution.status is Status.OPTIMAL:
            proven += 1
            above_exact += lb > s.exact.total_length
    verdict(4, above_exact == 0 and above_lf == 0,
            f"LB above exact optimum on {above_exact} of {proven} proven instances, "
            f"LB above LF on {above_lf} of {len(corpus)}")


def _coupling_breaks(f: np.ndarray, F: np.ndarray, arcs: np.ndarray, L: int) -> int:
    return sum(int(f[a]) > L * int(F[a]) for a in arcs.tolist())


def test_criterion_5_coupling(corpus) -> None:
    exact_breaks = agg_breaks = checked = 0
    for s in corpus:
        L = s.instance.L
        if s.exact.flow is not None:
            checked += 1
            rel = s.exact.network.relocation_arcs
            exact_breaks += _coupling_breaks(s.exact.flow.f, s.exact.flow.F, rel, L)
            exact_breaks += s.exact.model.program.exact_violation(
                [int(round(v)) for v in s.exact.solution.x]) != 0
        resolve = s.liftflow.resolve
        if resolve is not None:
            agg_breaks += _coupling_breaks(resolve.flow.f, resolve.flow.F, s.liftflow.network.relocation_arcs, L)
    verdict(5, exact_breaks == 0 and agg_breaks == 0,
            f"{exact_breaks} breaks in {checked} exact flows, {agg_breaks} in LiftFlow flows")


def test_criterion_6_round_trips(corpus) -> None:
    ten_bad = agg_bad = json_bad = 0
    for s in corpus:
        inst = s.instance
        if s.exact.schedule is not None:
            ten_bad += aggregate_schedule(s.exact.network, s.exact.schedule, inst) != s.exact.flow
        resolve = s.liftflow.resolve
        if resolve is not None:
            agg_bad += aggregate_pre_tours(resolve.pre_tours, resolve.cycles, s.liftflow.network) != resolve.flow
        text = dumps_instance(inst)
        json_bad += dumps_instance(loads_instance(text)) != text
        for sched in (s.exact.schedule, s.liftflow.schedule):
            if sched is not None:
                text = dumps_schedule(sched)
                json_bad += dumps_schedule(loads_schedule(text)) != text
    verdict(6, ten_bad == agg_bad == json_bad == 0,
            f"time-expanded {ten_bad}, aggregated {agg_bad}, JSON {json_bad} mismatches")


def bench_params() -> list[GenParams]:
    return [GenParams(10 + i // 2, 2 + i % 3, 2 + (i + 1) % 3, T=30 + 5 * (i % 3), L=2 + i % 3, k=2 + i % 2,
                      plane_size=12.0, seed=2000 + i) for i in range(20)]


def test_criterion_7_bench_gaps() -> None:
    rows = run_suite(bench_params(), BenchConfig(liftflow_time_limit=60, exact_time_limit=10))
    print(format_table(rows))
    gaps = [r.gap_percent for r in rows]
    finite = [g for g in gaps if g is not None and np.isfinite(g)]
    average = sum(finite) / len(finite) if finite else None
    ok = len(rows) == 20 and len(finite) == 20 and all(g >= 0 for g in finite) and average is not None
    avg = "none" if average is None else f"{average:.1f}%"
    verdict(7, ok, f"{len(finite)} of {len(rows)} rows with 0 <= GAP%, average {avg}")


def test_criterion_8_waiting_sets() -> None:
    rng = np.random.default_rng(8)
    wrong = 0
    for _ in range(1000):
        size = int(rng.integers(1, 9))
        preds = [(int(rng.integers(0, 30)), int(rng.integers(1, 6))) for _ in range(size)]
        at_origin = int(rng.integers(0, 4))
        load = int(rng.integers(1, at_origin + sum(c for _, c in preds) + 1))
        d = compute_waiting(load, preds, at_origin)
        wrong += (d.until, d.chosen) != waiting_oracle(load, preds, at_origin)
    verdict(8, wrong == 0, f"{wrong} of 1000 waiting decisions differ from enumeration")


def test_criterion_9_cut_and_resolve(corpus) -> None:
    inst, net, fixture = cyclic_fixture()
    cuts_seen = []

    def step(cuts):
        cuts_seen.append(cuts)
        if not cuts:
            return fixture, MipSolution(Status.OPTIMAL, objective_value=float(net.cost(fixture.F)))
        return solve_aggregated(net, inst, extra_cuts=cuts)

    res = cut_and_resolve(inst, step=step, net=net)
    first = res.objectives[0]
    fixture_ok = res.rounds == 1 and len(res.objectives) == 2 and res.objectives[1] >= first + 1
    rounds = sum(s.liftflow.report.cut_rounds for s in corpus)
    verdict(9, fixture_ok and rounds == 0,
            f"fixture: {res.rounds} cut, objective {first} -> {res.objectives[-1]}; "
            f"corpus: {rounds} cut rounds")


def test_criterion_10_performance() -> None:
    exact_inst = generate(GenParams(10, 3, 3, T=30, L=5, k=3, plane_size=12.0, seed=5))
    start = time.monotonic()
    exact = solve_exact(exact_inst, SolveLimits(time_limit=600))
    exact_s = time.monotonic() - start
    big = generate(GenParams(50, 10, 10, T=100, L=5, k=10, seed=7))
    start = time.monotonic()
    # step one may stop at its time limit; its bound still gives a valid LB
    lf = solve_liftflow(big, SolveLimits(time_limit=30))
    lf_s = time.monotonic() - start
    ok = exact.solution.status is Status.OPTIMAL and exact_s <= 600 and lf_s <= 60
    verdict(10, ok and validate_schedule(lf.schedule, big, check_horizon=False).ok,
            f"exact {exact.solution.status.value} {exact.total_length} in {exact_s:.0f}s; "
            f"LiftFlow on 50 stations {lf.report.total_length} (LB {lf.lower_bound}, step one "
            f"{lf.report.step1_status}) in {lf_s:.1f}s")
