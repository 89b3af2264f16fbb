"""Stations, the metric they live in, and the static relocation instance."""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import _kernels
from ._kernels import INF

StationId = int


class DisconnectedGraph(ValueError):
    def __init__(self, u: int, v: int):
        super().__init__(f"station {v} is unreachable from station {u}")
        self.pair = (u, v)


class InstanceFormatError(ValueError):
    """Raised when an instance file is missing fields or has the wrong types."""


@dataclass(frozen=True)
class WeightedGraph:
    node_count: int
    edges: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple((int(u), int(v), int(w)) for u, v, w in self.edges))

    def undirected_pairs(self) -> list[tuple[int, int]]:
        """Distinct station pairs ``(u, v)`` with ``u < v`` joined by at least one edge."""
        pairs = {(min(u, v), max(u, v)) for u, v, _ in self.edges if u != v}
        return sorted(pairs)


@dataclass(frozen=True, eq=False)
class MetricSpace:
    dist: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.dist, dtype=np.int64)
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    @property
    def n(self) -> int:
        return int(self.dist.shape[0])

    def __call__(self, u: int, v: int) -> int:
        return int(self.dist[u, v])


def build_metric(graph: WeightedGraph) -> MetricSpace:
    """All-pairs shortest path lengths of ``graph``.

    Raises :class:`DisconnectedGraph` naming the first unreachable pair.
    """
    n = graph.node_count
    d = np.full((n, n), INF, dtype=np.int64)
    np.fill_diagonal(d, 0)
    for u, v, w in graph.edges:
        if u == v:
            continue
        if w < d[u, v]:
            d[u, v] = w
            d[v, u] = w
    d = _kernels.floyd_warshall(d)
    bad = np.argwhere(d >= INF)
    if bad.size:
        u, v = (int(x) for x in bad[0])
        raise DisconnectedGraph(u, v)
    return MetricSpace(d)


@dataclass(frozen=True)
class Task:
    station: StationId
    x: int


@dataclass(frozen=True, eq=False)
class Instance:
    """A Static Relocation Problem.

    ``z0``/``zT`` are the start and target car counts per station, ``k`` the
    number of convoy drivers, ``L`` the convoy capacity and ``T`` the horizon.
    The shortest-path metric is computed lazily and cached.
    """

    graph: WeightedGraph
    capacity: tuple[int, ...]
    z0: tuple[int, ...]
    zT: tuple[int, ...]
    k: int
    L: int
    T: int
    depot: StationId = 0
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        for attr in ("capacity", "z0", "zT"):
            object.__setattr__(self, attr, tuple(int(x) for x in getattr(self, attr)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, int]], *, capacity, z0, zT,
                   k: int, L: int, T: int, depot: int = 0, name: str = "") -> Instance:
        return cls(WeightedGraph(n, tuple(edges)), tuple(capacity), tuple(z0), tuple(zT),
                   int(k), int(L), int(T), int(depot), name)

    @property
    def n(self) -> int:
        return self.graph.node_count

    @cached_property
    def metric(self) -> MetricSpace:
        return build_metric(self.graph)

    def d(self, u: int, v: int) -> int:
        return int(self.metric.dist[u, v])

    @property
    def surplus(self) -> np.ndarray:
        """``z0 - zT`` per station."""
        return np.asarray(self.z0, dtype=np.int64) - np.asarray(self.zT, dtype=np.int64)

    @property
    def total_cars(self) -> int:
        return sum(self.z0)

    def replace(self, **changes: Any) -> Instance:
        fields = dict(graph=self.graph, capacity=self.capacity, z0=self.z0, zT=self.zT,
                      k=self.k, L=self.L, T=self.T, depot=self.depot, name=self.name)
        fields.update(changes)
        return Instance(**fields)


def derive_tasks(instance: Instance) -> list[Task]:
    return [Task(v, int(a - b)) for v, (a, b) in enumerate(zip(instance.z0, instance.zT)) if a != b]


def task_groups(instance: Instance, full_limit: int = 10) -> list[tuple[int, ...]]:
    """Station sets whose cars must all cross the set boundary in one direction.

    These are the non-empty sets of overfull stations and of underfull
    stations.  A side with more than ``full_limit`` stations only contributes
    its sets of size 1, 2, ``n - 1`` and ``n``.
    """
    surplus = instance.surplus
    groups: list[tuple[int, ...]] = []
    for side in (np.flatnonzero(surplus > 0), np.flatnonzero(surplus < 0)):
        side = [int(v) for v in side]
        n = len(side)
        sizes = range(1, n + 1) if n <= full_limit else sorted({1, 2, n - 1, n})
        for r in sizes:
            groups.extend(itertools.combinations(side, r))
    return groups


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    severity: str = "error"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, code: str, message: str, severity: str = "error") -> None:
        self.violations.append(Violation(code, message, severity))

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def __bool__(self) -> bool:  # truthy when something was reported
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok,
                "violations": [{"code": v.code, "severity": v.severity, "message": v.message}
                               for v in self.violations]}


def validate_instance(instance: Instance) -> ValidationReport:
    report = ValidationReport()
    n = instance.graph.node_count
    if n < 1:
        report.add("graph.empty", "graph has no stations")
        return report
    for name in ("capacity", "z0", "zT"):
        if len(getattr(instance, name)) != n:
            report.add("shape", f"{name} has {len(getattr(instance, name))} entries, expected {n}")
    if not 0 <= instance.depot < n:
        report.add("depot.range", f"depot {instance.depot} is not a station")
    if instance.k < 1:
        report.add("k.range", f"k = {instance.k} must be at least 1")
    if instance.L < 1:
        report.add("L.range", f"L = {instance.L} must be at least 1")
    if instance.T < 1:
        report.add("T.range", f"T = {instance.T} must be positive")

    for u, v, w in instance.graph.edges:
        if not (0 <= u < n and 0 <= v < n):
            report.add("edge.range", f"edge ({u}, {v}) references an unknown station")
        elif u == v:
            report.add("edge.self_loop", f"self-loop at station {u}")
        if w <= 0:
            report.add("edge.weight", f"edge ({u}, {v}) has non-positive weight {w}")
    if any(c.startswith("edge.") for c in report.codes()):
        return report

    try:
        dist = instance.metric.dist
    except DisconnectedGraph as exc:
        report.add("graph.disconnected", str(exc))
    else:
        off = ~np.eye(n, dtype=bool)
        if np.any(dist[off] <= 0):
            report.add("metric.zero", "two distinct stations are at distance 0")

    if "shape" in report.codes():
        return report
    if sum(instance.z0) != sum(instance.zT):
        report.add("balance", f"sum(z0) = {sum(instance.z0)} differs from sum(zT) = {sum(instance.zT)}")
    for v in range(n):
        cap = instance.capacity[v]
        if cap < 0:
            report.add("capacity.negative", f"station {v} has negative capacity {cap}")
        for label, z in (("z0", instance.z0), ("zT", instance.zT)):
            if z[v] < 0:
                report.add("cars.negative", f"{label}[{v}] = {z[v]} is negative")
            elif z[v] > cap:
                report.add("capacity", f"{label}[{v}] = {z[v]} exceeds capacity {cap}")
    return report


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

_FIELDS = ("stations", "edges", "z0", "zT", "k", "L", "T", "depot")


def instance_to_dict(instance: Instance) -> dict[str, Any]:
    return {
        "stations": [{"id": v, "capacity": c} for v, c in enumerate(instance.capacity)],
        "edges": [[u, v, w] for u, v, w in instance.graph.edges],
        "z0": list(instance.z0),
        "zT": list(instance.zT),
        "k": instance.k,
        "L": instance.L,
        "T": instance.T,
        "depot": instance.depot,
    }


def dumps_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), separators=(", ", ": ")) + "\n"


def _int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InstanceFormatError(f"{where}: expected an integer, got {value!r}")
    return value


def instance_from_dict(data: dict[str, Any], name: str = "") -> Instance:
    if not isinstance(data, dict):
        raise InstanceFormatError("instance must be a JSON object")
    missing = [f for f in _FIELDS if f not in data]
    if missing:
        raise InstanceFormatError(f"missing field(s): {', '.join(missing)}")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        warnings.warn(f"ignoring unknown instance field(s): {', '.join(unknown)}", stacklevel=2)

    stations = data["stations"]
    if not isinstance(stations, list) or not stations:
        raise InstanceFormatError("stations: expected a non-empty list")
    caps: dict[int, int] = {}
    for i, st in enumerate(stations):
        if not isinstance(st, dict) or "id" not in st or "capacity" not in st:
            raise InstanceFormatError(f"stations[{i}]: expected {{'id', 'capacity'}}")
        caps[_int(st["id"], f"stations[{i}].id")] = _int(st["capacity"], f"stations[{i}].capacity")
    n = len(stations)
    if sorted(caps) != list(range(n)):
        raise InstanceFormatError("station ids must be dense 0..n-1")

    edges = []
    for i, e in enumerate(data["edges"]):
        if not isinstance(e, list) or len(e) != 3:
            raise InstanceFormatError(f"edges[{i}]: expected [u, v, w]")
        edges.append(tuple(_int(x, f"edges[{i}]") for x in e))
    z0 = [_int(x, "z0") for x in data["z0"]]
    zT = [_int(x, "zT") for x in data["zT"]]
    if len(z0) != n or len(zT) != n:
        raise InstanceFormatError(f"z0/zT must have one entry per station ({n})")
    return Instance.from_edges(
        n, edges, capacity=[caps[v] for v in range(n)], z0=z0, zT=zT,
        k=_int(data["k"], "k"), L=_int(data["L"], "L"), T=_int(data["T"], "T"),
        depot=_int(data["depot"], "depot"), name=name)


def loads_instance(text: str, name: str = "") -> Instance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"not valid JSON: {exc}") from exc
    return instance_from_dict(data, name=name)


def read_instance(path: str | Path) -> Instance:
    path = Path(path)
    return loads_instance(path.read_text(encoding="utf-8"), name=path.stem)


def write_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(instance), encoding="utf-8")
