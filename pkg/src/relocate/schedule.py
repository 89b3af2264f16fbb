"""Moves, tours and transportation schedules; state simulation and validation.

Timing convention: a junction between two consecutive moves of a tour is a
single net event.  If the load goes down, the difference is dropped at the
arrival instant; if it goes up, it is picked up at the departure instant.
The first move picks up its load at the depot and the last move drops
whatever it still carries there.  The station state ``z[:, t]`` is taken
after every event at time ``t``; cars inside a convoy occupy no station.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from .instance import Instance, ValidationReport


class ScheduleFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Move:
    driver: int
    origin: int
    destination: int
    departure: int
    arrival: int
    load: int = 0

    @property
    def is_waiting(self) -> bool:
        return self.origin == self.destination


@dataclass(frozen=True)
class Tour:
    driver: int
    moves: tuple[Move, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "moves", tuple(self.moves))

    def length(self, instance: Instance) -> int:
        dist = instance.metric.dist
        return int(sum(dist[m.origin, m.destination] for m in self.moves if not m.is_waiting))

    @property
    def end_time(self) -> int:
        return self.moves[-1].arrival if self.moves else 0

    @property
    def last_travel_arrival(self) -> int:
        return max((m.arrival for m in self.moves if not m.is_waiting), default=0)


@dataclass(frozen=True)
class Event:
    station: int
    time: int
    delta: int  # > 0 drop into the station, < 0 pickup from it
    driver: int
    move_index: int


@dataclass
class TransportationSchedule:
    tours: list[Tour] = field(default_factory=list)

    def __iter__(self) -> Iterator[Tour]:
        return iter(self.tours)

    def __len__(self) -> int:
        return len(self.tours)

    def moves(self) -> Iterator[Move]:
        for tour in self.tours:
            yield from tour.moves

    def total_length(self, instance: Instance) -> int:
        return sum(t.length(instance) for t in self.tours)

    def per_tour_lengths(self, instance: Instance) -> list[int]:
        return [t.length(instance) for t in self.tours]

    @property
    def makespan(self) -> int:
        """Latest arrival of a non-waiting move (0 when nobody travels)."""
        return max((t.last_travel_arrival for t in self.tours), default=0)

    def horizon_violations(self, T: int) -> list[int]:
        """Drivers whose tour ends after ``T``."""
        return [t.driver for t in self.tours if t.end_time > T]


# --------------------------------------------------------------------------
# construction helpers
# --------------------------------------------------------------------------

def waiting_tour(driver: int, depot: int, T: int) -> Tour:
    return Tour(driver, (Move(driver, depot, depot, 0, T, 0),) if T > 0 else ())


def normalize_moves(moves: Iterable[Move]) -> list[Move]:
    """Merge back-to-back waiting moves at one station with equal load; drop empty waits."""
    out: list[Move] = []
    for m in moves:
        if m.is_waiting and m.arrival == m.departure:
            continue
        if (out and m.is_waiting and out[-1].is_waiting and out[-1].origin == m.origin
                and out[-1].load == m.load and out[-1].arrival == m.departure):
            prev = out.pop()
            m = Move(m.driver, m.origin, m.destination, prev.departure, m.arrival, m.load)
        out.append(m)
    return out


# --------------------------------------------------------------------------
# events and simulation
# --------------------------------------------------------------------------

def tour_events(tour: Tour) -> list[Event]:
    """Net pickup/drop events of one tour, in tour order."""
    events = []
    moves = tour.moves
    prev_load = 0
    for i, m in enumerate(moves):
        delta = prev_load - m.load
        if delta > 0:
            p = moves[i - 1]
            events.append(Event(p.destination, p.arrival, delta, tour.driver, i - 1))
        elif delta < 0:
            events.append(Event(m.origin, m.departure, delta, tour.driver, i))
        prev_load = m.load
    if moves and prev_load:
        last = moves[-1]
        events.append(Event(last.destination, last.arrival, prev_load, tour.driver, len(moves) - 1))
    return events


def schedule_events(schedule: TransportationSchedule) -> list[Event]:
    return [e for tour in schedule.tours for e in tour_events(tour)]


@dataclass
class StateTrajectory:
    """Station car counts; ``z[v, t]`` is the state after all events at ``t``."""

    initial: np.ndarray
    z: np.ndarray

    @property
    def horizon(self) -> int:
        return self.z.shape[1] - 1

    @property
    def final(self) -> np.ndarray:
        return self.z[:, -1]


def simulate_states(schedule: TransportationSchedule, instance: Instance) -> StateTrajectory:
    events = schedule_events(schedule)
    horizon = max([instance.T] + [e.time for e in events])
    n = instance.n
    change = np.zeros((n, horizon + 1), dtype=np.int64)
    for e in events:
        if 0 <= e.station < n and e.time >= 0:
            change[e.station, e.time] += e.delta
    initial = np.asarray(instance.z0, dtype=np.int64)
    z = initial[:, None] + np.cumsum(change, axis=1)
    return StateTrajectory(initial, z)


def station_activity(schedule: TransportationSchedule, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gross ``(picked_up, dropped)`` car counts per station."""
    picked = np.zeros(n, dtype=np.int64)
    dropped = np.zeros(n, dtype=np.int64)
    for e in schedule_events(schedule):
        if 0 <= e.station < n:
            if e.delta < 0:
                picked[e.station] -= e.delta
            else:
                dropped[e.station] += e.delta
    return picked, dropped


def cross_tour_precedences(schedule: TransportationSchedule, instance: Instance) -> list[tuple[Event, Event]]:
    """``(drop, pickup)`` pairs of different tours that force an order between them.

    At an overfull station a drop feeds a later pickup; at an underfull
    station a pickup has to wait for a drop.
    """
    surplus = instance.surplus
    by_station: dict[int, list[Event]] = defaultdict(list)
    for e in schedule_events(schedule):
        by_station[e.station].append(e)
    pairs = []
    for v, events in sorted(by_station.items()):
        if surplus[v] == 0:
            continue
        drops = [e for e in events if e.delta > 0]
        picks = [e for e in events if e.delta < 0]
        pairs.extend((d, p) for d in drops for p in picks if d.driver != p.driver)
    return pairs


def is_preemptive(schedule: TransportationSchedule, instance: Instance) -> bool:
    return bool(cross_tour_precedences(schedule, instance))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate_schedule(schedule: TransportationSchedule, instance: Instance,
                      check_horizon: bool = True) -> ValidationReport:
    report = ValidationReport()
    n, dist = instance.n, instance.metric.dist

    drivers = [t.driver for t in schedule.tours]
    if len(schedule.tours) != instance.k:
        report.add("schedule.tour_count", f"{len(schedule.tours)} tours for {instance.k} drivers")
    if sorted(drivers) != list(range(1, len(drivers) + 1)):
        report.add("schedule.drivers", f"driver ids {sorted(drivers)} are not 1..{len(drivers)} without repeats")

    structural = False
    for tour in schedule.tours:
        moves = tour.moves
        for i, m in enumerate(moves):
            where = f"driver {tour.driver}, move {i}"
            if m.driver != tour.driver:
                report.add("tour.driver", f"{where}: move assigned to driver {m.driver}")
            if not (0 <= m.origin < n and 0 <= m.destination < n):
                report.add("move.station", f"{where}: unknown station")
                structural = True
                continue
            if not 0 <= m.load <= instance.L:
                report.add("move.load", f"{where}: load {m.load} outside 0..{instance.L}")
            if m.departure < 0:
                report.add("move.time", f"{where}: departs before 0")
            if m.is_waiting:
                if m.arrival <= m.departure:
                    report.add("move.wait_duration", f"{where}: waiting move of non-positive duration")
            elif m.arrival != m.departure + dist[m.origin, m.destination]:
                report.add("move.timing",
                           f"{where}: arrival {m.arrival} != {m.departure} + d({m.origin},{m.destination})")
            if i and (moves[i - 1].destination != m.origin or moves[i - 1].arrival != m.departure):
                report.add("tour.chain", f"{where}: does not continue the previous move")
        if moves and (moves[0].origin != instance.depot or moves[-1].destination != instance.depot):
            report.add("tour.depot", f"driver {tour.driver}: tour does not start and end at the depot")
        if check_horizon and tour.end_time > instance.T:
            report.add("horizon", f"driver {tour.driver}: tour ends at {tour.end_time} > T = {instance.T}")
    if structural:
        return report

    picked, dropped = station_activity(schedule, n)
    surplus = instance.surplus
    for v in range(n):
        net = int(picked[v] - dropped[v])
        if net != surplus[v]:
            report.add("task.service", f"station {v}: net pickup {net}, task requires {int(surplus[v])}")
        elif surplus[v] > 0 and picked[v] > surplus[v]:
            report.add("task.oversatisfied", f"station {v}: {int(picked[v])} cars picked up for a task of {int(surplus[v])}",
                       severity="warning")
        elif surplus[v] < 0 and dropped[v] > -surplus[v]:
            report.add("task.oversatisfied", f"station {v}: {int(dropped[v])} cars dropped for a task of {int(-surplus[v])}",
                       severity="warning")

    traj = simulate_states(schedule, instance)
    cap = np.asarray(instance.capacity, dtype=np.int64)[:, None]
    for v, t in np.argwhere(traj.z < 0)[:5]:
        report.add("state.negative", f"station {v} holds {traj.z[v, t]} cars at t = {t}")
    for v, t in np.argwhere(traj.z > cap)[:5]:
        report.add("state.capacity", f"station {v} holds {traj.z[v, t]} > {cap[v, 0]} cars at t = {t}")
    return report


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

def schedule_to_dict(schedule: TransportationSchedule) -> dict[str, Any]:
    return {"tours": [{"driver": t.driver,
                       "moves": [{"from": m.origin, "to": m.destination, "dep": m.departure,
                                  "arr": m.arrival, "load": m.load} for m in t.moves]}
                      for t in schedule.tours]}


def dumps_schedule(schedule: TransportationSchedule) -> str:
    lines = ['{"tours": [']
    for i, t in enumerate(schedule.tours):
        moves = ",\n".join("    " + json.dumps({"from": m.origin, "to": m.destination, "dep": m.departure,
                                                 "arr": m.arrival, "load": m.load})
                           for m in t.moves)
        body = f"\n{moves}\n  " if t.moves else ""
        sep = "," if i < len(schedule.tours) - 1 else ""
        lines.append(f'  {{"driver": {t.driver}, "moves": [{body}]}}{sep}')
    lines.append("]}")
    return "\n".join(lines) + "\n"


def schedule_from_dict(data: dict[str, Any]) -> TransportationSchedule:
    try:
        tours = []
        for t in data["tours"]:
            driver = int(t["driver"])
            moves = tuple(Move(driver, int(m["from"]), int(m["to"]), int(m["dep"]), int(m["arr"]),
                               int(m["load"])) for m in t["moves"])
            tours.append(Tour(driver, moves))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScheduleFormatError(f"malformed schedule: {exc!r}") from exc
    return TransportationSchedule(tours)


def loads_schedule(text: str) -> TransportationSchedule:
    try:
        return schedule_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"not valid JSON: {exc}") from exc


def read_schedule(path: str | Path) -> TransportationSchedule:
    return loads_schedule(Path(path).read_text(encoding="utf-8"))


def write_schedule(schedule: TransportationSchedule, path: str | Path) -> None:
    Path(path).write_text(dumps_schedule(schedule), encoding="utf-8")


# --------------------------------------------------------------------------
# exhaustive optimum for tiny instances
# --------------------------------------------------------------------------

class OracleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleCaps:
    max_stations: int = 4
    max_T: int = 8
    max_drivers: int = 2
    max_L: int = 3
    max_surplus: int = 3


# driver state inside the oracle: (station, arrival time, load carried)
_Driver = tuple[int, int, int]


def _driver_options(v: int, t: int, T: int, L: int, pool: int,
                    neighbours: list[tuple[int, int]]) -> list[tuple[int, int, int]]:
    """``(destination, duration, load)`` choices of a driver standing at ``v``."""
    opts = [(v, 1, 0)] if t < T else []
    for w, d in neighbours:
        if t + d <= T:
            opts.extend((w, d, load) for load in range(min(L, pool) + 1))
    return opts


def brute_force_optimum(instance: Instance, caps: OracleCaps | None = None
                        ) -> tuple[int, TransportationSchedule] | None:
    """Minimum total tour length by exhaustive search; ``None`` if no schedule fits in ``T``.

    The search runs over layers ``t = 0..T`` of the product state (station
    stocks, every driver's position, arrival time and load).  Drivers travel
    along graph edges, cars may change convoys at a station within one
    instant, and parked cars count against capacity between instants.  Since
    every transition moves forward in time, keeping the cheapest way into
    each state layer by layer is a shortest-path computation.
    """
    caps = caps or OracleCaps()
    surplus = instance.surplus
    total_surplus = int(surplus[surplus > 0].sum())
    if (instance.n > caps.max_stations or instance.T > caps.max_T or instance.k > caps.max_drivers
            or instance.L > caps.max_L or total_surplus > caps.max_surplus):
        raise OracleTooLarge(
            f"instance exceeds oracle bounds (|V| <= {caps.max_stations}, T <= {caps.max_T}, "
            f"k <= {caps.max_drivers}, L <= {caps.max_L}, surplus <= {caps.max_surplus})")

    n, T, L, k, depot = instance.n, instance.T, instance.L, instance.k, instance.depot
    dist = instance.metric.dist
    cap = [int(c) for c in instance.capacity]
    neighbours: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for u, v in instance.graph.undirected_pairs():
        neighbours[u].append((v, int(dist[u, v])))
        neighbours[v].append((u, int(dist[u, v])))

    State = tuple[tuple[int, ...], tuple[_Driver, ...]]
    start: State = (tuple(int(x) for x in instance.z0), tuple((depot, 0, 0) for _ in range(k)))
    layer: dict[State, int] = {start: 0}
    back: list[dict[State, tuple[State, tuple]]] = []
    target = tuple(int(x) for x in instance.zT)

    for t in range(T):
        nxt: dict[State, int] = {}
        parents: dict[State, tuple[State, tuple]] = {}
        for state, cost in layer.items():
            stock, drivers = state
            pool = list(stock)
            for v, arr, load in drivers:
                if arr == t:
                    pool[v] += load
            present = [i for i, (_, arr, _) in enumerate(drivers) if arr == t]
            choices = [_driver_options(drivers[i][0], t, T, L, pool[drivers[i][0]], neighbours[drivers[i][0]])
                       for i in present]
            for combo in itertools.product(*choices):
                left = pool.copy()
                step = 0
                new_drivers = list(drivers)
                for i, (w, d, load) in zip(present, combo):
                    v = drivers[i][0]
                    left[v] -= load
                    if w != v:
                        step += d
                    new_drivers[i] = (w, t + d, load)
                if any(x < 0 or x > c for x, c in zip(left, cap)):
                    continue
                key = (tuple(left), tuple(new_drivers))
                value = cost + step
                if value < nxt.get(key, value + 1):
                    nxt[key] = value
                    parents[key] = (state, tuple(zip(present, combo)))
        layer = nxt
        back.append(parents)

    best: tuple[int, State] | None = None
    for state, cost in layer.items():
        stock, drivers = state
        if any(v != depot or arr != T for v, arr, _ in drivers):
            continue
        final = list(stock)
        for v, _, load in drivers:
            final[v] += load
        if tuple(final) == target and (best is None or cost < best[0]):
            best = (cost, state)
    if best is None:
        return None

    per_driver: list[list[Move]] = [[] for _ in range(k)]
    state = best[1]
    for t in range(T - 1, -1, -1):
        state, actions = back[t][state]
        drivers = state[1]
        for i, (w, d, load) in actions:
            per_driver[i].append(Move(i + 1, drivers[i][0], w, t, t + d, load))
    tours = [Tour(i + 1, normalize_moves(reversed(moves))) for i, moves in enumerate(per_driver)]
    return best[0], TransportationSchedule(tours)
