from __future__ import annotations

import itertools

import numpy as np
import pytest

from relocate.generator import GenParams, generate
from relocate.instance import Instance
from relocate.liftflow import AggregatedFlow, build_aggregated


def line_instance(positions: list[int], z0: list[int], zT: list[int], *, depot: int,
                  k: int = 1, L: int = 2, T: int = 8, capacity: int = 10) -> Instance:
    """Stations on a line, consecutive ones joined by an edge of their distance."""
    order = sorted(range(len(positions)), key=positions.__getitem__)
    edges = [(a, b, positions[b] - positions[a]) for a, b in zip(order, order[1:])]
    n = len(positions)
    return Instance.from_edges(n, edges, capacity=[capacity] * n, z0=z0, zT=zT,
                               k=k, L=L, T=T, depot=depot)


_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter) -> None:
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def line3() -> Instance:
    """Depot in the middle; one car must go from station 0 to station 2 (distance 2)."""
    return line_instance([0, 1, 2], [1, 0, 0], [0, 0, 1], depot=1, k=1, L=1, T=6)


@pytest.fixture
def balanced() -> Instance:
    return line_instance([0, 2, 5], [2, 1, 3], [2, 1, 3], depot=0, k=2, L=3, T=10)


def tiny_params(seed: int) -> GenParams:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 5))
    over = 1 if n == 3 else int(rng.integers(1, 3))
    under = 1 if n == 3 or over == 2 else int(rng.integers(1, 3))
    return GenParams(n, over, under, T=int(rng.integers(6, 9)), L=int(rng.integers(1, 4)),
                     k=int(rng.integers(1, 3)), plane_size=3.0, surplus_range=(1, 3),
                     base_range=(0, 1), neighbors=2, seed=seed)


def random_tiny(seed: int) -> Instance:
    return generate(tiny_params(seed))


def aggregated_flow(net, arcs: dict[tuple[int, int], tuple[int, int]]) -> AggregatedFlow:
    """``{(src, dst): (F, f)}`` on non-depot arcs; depot arcs are keyed with the arc class."""
    F = np.zeros(net.n_arcs, dtype=np.int64)
    f = np.zeros(net.n_arcs, dtype=np.int64)
    for a in range(net.n_arcs):
        key = (int(net.src[a]), int(net.dst[a]))
        if key in arcs:
            F[a], f[a] = arcs[key]
    return AggregatedFlow(f, F)


def waiting_oracle(load: int, preds: list[tuple[int, int]], at_origin: int):
    """Best waiting set by trying every subset: earliest finish, then fewest tours, then fewest cars."""
    need = load - at_origin
    if need <= 0:
        return None, ()
    best = None
    for r in range(1, len(preds) + 1):
        for subset in itertools.combinations(range(len(preds)), r):
            cars = sum(preds[i][1] for i in subset)
            if cars < need:
                continue
            key = (max(preds[i][0] for i in subset), r, cars, subset)
            best = key if best is None or key < best else best
    return best[0], best[3]


def cyclic_fixture():
    """Two tours that each drop at the overfull station the other picks up from.

    Stations: depot 0, underfull 1 and 4, overfull 2 and 3 (+2 each, L = 3).
    The flow relays 3 cars each way between stations 2 and 3; decomposed it
    yields tour 0 = 0-2-3-1-0 and tour 1 = 0-3-2-4-0.
    """
    inst = line_instance([0, -2, 2, 3, 5], [0, 0, 2, 2, 0], [0, 2, 0, 0, 2], depot=0, k=2, L=3, T=60)
    net = build_aggregated(inst)
    flow = aggregated_flow(net, {(0, 2): (1, 0), (0, 3): (1, 0), (2, 3): (1, 3), (3, 2): (1, 3),
                                 (2, 4): (1, 2), (3, 1): (1, 2), (1, 0): (1, 0), (4, 0): (1, 0)})
    return inst, net, flow
