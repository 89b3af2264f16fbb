"""Pluggable solver backends.

An adapter is any callable ``(program, limits) -> MipSolution`` that honours
the status semantics of :func:`~relocate.mip.bnb.solve_ip`.  The in-house
branch-and-bound is registered as ``"internal"`` and is the default; scipy's
HiGHS MILP wrapper ships as ``"highs"`` for cross-checking.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .bnb import solve_ip
from .model import IntegerProgram, MipSolution, SolveLimits, Status

Adapter = Callable[[IntegerProgram, SolveLimits], MipSolution]

_BACKENDS: dict[str, Adapter] = {}


class BackendError(RuntimeError):
    pass


def register_backend(name: str, adapter: Adapter) -> None:
    if not callable(adapter):
        raise TypeError("backend adapter must be callable")
    _BACKENDS[name] = adapter


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def solve(program: IntegerProgram, limits: SolveLimits | None = None,
          backend: str = "internal") -> MipSolution:
    try:
        adapter = _BACKENDS[backend]
    except KeyError:
        raise BackendError(f"unknown backend {backend!r}; have {available_backends()}") from None
    limits = limits or SolveLimits()
    try:
        result = adapter(program, limits)
    except BackendError:
        raise
    except Exception as exc:  # adapter code is foreign; surface its message
        raise BackendError(f"{backend}: {exc}") from exc
    if not isinstance(result, MipSolution):
        raise BackendError(f"{backend}: adapter returned {type(result).__name__}, not MipSolution")
    return result


def highs_milp(program: IntegerProgram, limits: SolveLimits) -> MipSolution:
    start = time.monotonic()
    c, A_ub, b_ub, A_eq, b_eq, lb, ub = program.arrays()
    constraints = []
    if A_ub is not None:
        constraints.append(LinearConstraint(A_ub, -np.inf, b_ub))
    if A_eq is not None:
        constraints.append(LinearConstraint(A_eq, b_eq, b_eq))
    options = {"mip_rel_gap": limits.rel_gap}
    if math.isfinite(limits.time_limit):
        options["time_limit"] = limits.time_limit
    if limits.node_limit is not None:
        options["node_limit"] = limits.node_limit
    res = milp(c, integrality=program.integer_mask.astype(int), bounds=Bounds(lb, ub),
               constraints=constraints, options=options)
    names = [v.name for v in program.variables]
    x = None
    if res.x is not None:
        x = np.asarray(res.x, dtype=float)
        m = program.integer_mask
        x[m] = np.rint(x[m])
    bound = getattr(res, "mip_dual_bound", None)
    if res.status == 0:
        status = Status.OPTIMAL
        bound = float(res.fun)
    elif res.status == 2:
        status = Status.INFEASIBLE
    elif res.status == 3:
        status = Status.UNBOUNDED
    elif x is not None:
        status = Status.FEASIBLE
    else:
        status = Status.LIMIT_REACHED
    return MipSolution(status=status, x=x,
                       objective_value=None if x is None else program.objective_at(x),
                       bound=None if bound is None or not math.isfinite(bound) else float(bound),
                       names=names, nodes=int(getattr(res, "mip_node_count", 0) or 0),
                       runtime=time.monotonic() - start, message=str(res.message))


register_backend("internal", solve_ip)
register_backend("highs", highs_milp)
