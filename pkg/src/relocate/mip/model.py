from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

Number = Union[int, float, Fraction]

INT_TOL = 1e-6
FEAS_TOL = 1e-6


class Relation(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    LIMIT_REACHED = "LimitReached"
    UNBOUNDED = "Unbounded"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


class ModelError(ValueError):
    pass


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    integer: bool = True
    priority: int = 0
    """Branching class; higher classes are branched on first."""


@dataclass
class Constraint:
    coeffs: dict[int, Number]
    relation: Relation
    rhs: Number
    name: str = ""


@dataclass(frozen=True)
class SolveLimits:
    time_limit: float = math.inf
    node_limit: int | None = None
    abs_gap: float = 1e-6
    rel_gap: float = 0.0

    def __post_init__(self) -> None:
        if self.time_limit < 0 or self.abs_gap < 0 or self.rel_gap < 0:
            raise ValueError("solve limits must be non-negative")
        if self.node_limit is not None and self.node_limit < 0:
            raise ValueError("node_limit must be non-negative")


def relative_gap(objective: float | None, bound: float | None) -> float | None:
    if objective is None or bound is None or not math.isfinite(bound):
        return None
    diff = objective - bound
    if abs(diff) <= 1e-9:
        return 0.0
    if objective == 0:
        return math.inf
    return diff / abs(objective)


@dataclass
class MipSolution:
    status: Status
    x: np.ndarray | None = None
    objective_value: float | None = None
    bound: float | None = None
    names: list[str] = field(default_factory=list, repr=False)
    nodes: int = 0
    runtime: float = 0.0
    history: list[tuple[int, float, float]] = field(default_factory=list, repr=False)
    message: str = ""

    @property
    def gap(self) -> float | None:
        if self.status is Status.OPTIMAL:
            return 0.0
        return relative_gap(self.objective_value, self.bound)

    @property
    def values(self) -> dict[str, float]:
        if self.x is None:
            return {}
        return dict(zip(self.names, self.x.tolist()))

    def value(self, name: str) -> float:
        return float(self.x[self.names.index(name)])


class IntegerProgram:
    """A minimisation problem over bounded variables with linear constraints.

    Coefficients are keyed by variable index.  Data may be ``int``,
    ``Fraction`` or ``float``; with integral data the final integer solution
    is re-checked exactly.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, Number] = {}
        self._by_name: dict[str, int] = {}
        self._arrays = None
        self.start: list[Number] | None = None

    # -- building ---------------------------------------------------------
    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, *,
                integer: bool = True, priority: int = 0) -> int:
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        if lb > ub:
            raise ModelError(f"variable {name!r}: lower bound {lb} exceeds upper bound {ub}")
        self._by_name[name] = len(self.variables)
        self.variables.append(Variable(name, lb, ub, integer, priority))
        self._arrays = None
        return len(self.variables) - 1

    def set_start(self, values: Sequence[Number] | None) -> None:
        """A known feasible point, tried as the first incumbent.

        The internal solver discards it if it violates the model; backends
        without warm starts ignore it.
        """
        if values is not None and len(values) != len(self.variables):
            raise ModelError(f"start has {len(values)} values for {len(self.variables)} variables")
        self.start = None if values is None else list(values)

    def index(self, name: str) -> int:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def _resolve(self, coeffs: Mapping[int | str, Number]) -> dict[int, Number]:
        out: dict[int, Number] = {}
        n = len(self.variables)
        for key, c in coeffs.items():
            j = self._by_name[key] if isinstance(key, str) else int(key)
            if not 0 <= j < n:
                raise ModelError(f"coefficient references undeclared variable {key!r}")
            if c:
                out[j] = out.get(j, 0) + c
        return out

    def add_constraint(self, coeffs: Mapping[int | str, Number], relation: Relation | str,
                       rhs: Number, name: str = "") -> int:
        self.constraints.append(Constraint(self._resolve(coeffs), Relation(relation), rhs,
                                           name or f"c{len(self.constraints)}"))
        self._arrays = None
        return len(self.constraints) - 1

    def set_objective(self, coeffs: Mapping[int | str, Number]) -> None:
        self.objective = self._resolve(coeffs)
        self._arrays = None

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([v.integer for v in self.variables], dtype=bool)

    def check(self) -> list[str]:
        """Well-formedness problems, empty when the program can be solved."""
        problems = []
        for v in self.variables:
            if v.lb > v.ub:
                problems.append(f"{v.name}: lb > ub")
        n = len(self.variables)
        for con in self.constraints:
            if any(not 0 <= j < n for j in con.coeffs):
                problems.append(f"{con.name}: references undeclared variable")
        return problems

    def objective_is_integral(self) -> bool:
        """True when every feasible integer point has an integral objective."""
        for j, c in self.objective.items():
            if not self.variables[j].integer:
                return False
            if isinstance(c, float) and not c.is_integer():
                return False
            if isinstance(c, Fraction) and c.denominator != 1:
                return False
        return True

    # -- matrices ---------------------------------------------------------
    def arrays(self):
        """``(c, A_ub, b_ub, A_eq, b_eq, lb, ub)`` with ``>=`` rows negated."""
        if self._arrays is not None:
            return self._arrays
        n = len(self.variables)
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = float(v)
        rows = {Relation.LE: ([], [], [], []), Relation.EQ: ([], [], [], [])}
        for con in self.constraints:
            sign = -1.0 if con.relation is Relation.GE else 1.0
            r, cols, vals, rhs = rows[Relation.EQ if con.relation is Relation.EQ else Relation.LE]
            i = len(rhs)
            for j, a in con.coeffs.items():
                r.append(i)
                cols.append(j)
                vals.append(sign * float(a))
            rhs.append(sign * float(con.rhs))

        def mat(key):
            r, cols, vals, rhs = rows[key]
            if not rhs:
                return None, None
            A = sp.csr_matrix((vals, (r, cols)), shape=(len(rhs), n))
            return A, np.array(rhs)

        A_ub, b_ub = mat(Relation.LE)
        A_eq, b_eq = mat(Relation.EQ)
        lb = np.array([v.lb for v in self.variables], dtype=float)
        ub = np.array([v.ub for v in self.variables], dtype=float)
        self._arrays = (c, A_ub, b_ub, A_eq, b_eq, lb, ub)
        return self._arrays

    # -- checking ---------------------------------------------------------
    def objective_at(self, x) -> float:
        return float(sum(float(c) * float(x[j]) for j, c in self.objective.items()))

    def max_violation(self, x) -> float:
        """Largest absolute constraint or bound violation at ``x`` (floating point)."""
        worst = 0.0
        for j, v in enumerate(self.variables):
            worst = max(worst, v.lb - x[j], x[j] - v.ub)
        for con in self.constraints:
            act = sum(float(a) * x[j] for j, a in con.coeffs.items())
            worst = max(worst, _excess(act, con.relation, float(con.rhs)))
        return float(worst)

    def exact_violation(self, x) -> Fraction:
        """Like :meth:`max_violation` but in exact rational arithmetic.

        ``x`` must hold exactly representable values, e.g. rounded integers.
        """
        vals = [_as_fraction(t) for t in x]
        worst = Fraction(0)
        for j, v in enumerate(self.variables):
            if math.isfinite(v.lb):
                worst = max(worst, _as_fraction(v.lb) - vals[j])
            if math.isfinite(v.ub):
                worst = max(worst, vals[j] - _as_fraction(v.ub))
        for con in self.constraints:
            act = sum((_as_fraction(a) * vals[j] for j, a in con.coeffs.items()), Fraction(0))
            worst = max(worst, _excess(act, con.relation, _as_fraction(con.rhs)))
        return worst


def _excess(act, relation: Relation, rhs):
    if relation is Relation.LE:
        return act - rhs
    if relation is Relation.GE:
        return rhs - act
    return abs(act - rhs)


def _as_fraction(v) -> Fraction:
    if isinstance(v, Rational):
        return Fraction(v)
    return Fraction(float(v))
