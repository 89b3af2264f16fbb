"""LP-based branch-and-bound.

Best-bound node selection, most-fractional branching (highest branching
priority class first, ties to the lowest variable index), and rounding
dives for incumbents, first from the root and then periodically from the
best open node.  A start point stored on the program is tried first.
Children are solved when created so every open node carries its exact LP
bound.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from fractions import Fraction

import numpy as np

from .lp import LPRelaxation
from .model import (FEAS_TOL, INT_TOL, IntegerProgram, MipSolution, ModelError, SolveLimits,
                    Status)

log = logging.getLogger(__name__)

_MAX_DIVE_LPS = 600
# later dives start from the best open node; shorter, since an incumbent prunes them
_DIVE_EVERY = 100
_REPEAT_DIVE_LPS = 150


class _Search:
    def __init__(self, program: IntegerProgram, limits: SolveLimits, dive: bool, lp_engine: str = "auto"):
        self.program = program
        self.limits = limits
        self.use_dive = dive
        self.start = time.monotonic()
        self.deadline = self.start + limits.time_limit
        self.rel = LPRelaxation(program, lp_engine)
        self.int_mask = program.integer_mask
        self.pure_integer = bool(self.int_mask.all())
        self.priority = np.array([v.priority for v in program.variables], dtype=np.int64)
        self.integral_objective = program.objective_is_integral()

        lb, ub = self.rel.lb.copy(), self.rel.ub.copy()
        m = self.int_mask
        lb[m] = np.ceil(lb[m] - INT_TOL)
        ub[m] = np.floor(ub[m] + INT_TOL)
        self.root_lb, self.root_ub = lb, ub

        self.incumbent: np.ndarray | None = None
        self.incumbent_value = math.inf
        self.best_bound = -math.inf
        self.heap: list = []
        self._seq = itertools.count()
        self.nodes = 0
        self.history: list[tuple[int, float, float]] = []
        self.hit_limit = False

    # -- helpers ----------------------------------------------------------
    def remaining(self) -> float:
        return self.deadline - time.monotonic()

    def out_of_budget(self) -> bool:
        if self.remaining() <= 0:
            return True
        node_limit = self.limits.node_limit
        return node_limit is not None and self.nodes >= node_limit

    def tolerance(self) -> float:
        if not math.isfinite(self.incumbent_value):
            return 0.0
        return max(self.limits.abs_gap, self.limits.rel_gap * abs(self.incumbent_value))

    def lp_bound(self, obj: float) -> float:
        if self.integral_objective:
            return float(math.ceil(obj - 1e-6))
        return obj

    def bounds_for(self, changes) -> tuple[np.ndarray, np.ndarray]:
        lb, ub = self.root_lb.copy(), self.root_ub.copy()
        for j, side, value in changes:
            if side == "lb":
                lb[j] = max(lb[j], value)
            else:
                ub[j] = min(ub[j], value)
        return lb, ub

    def branch_variable(self, x: np.ndarray) -> int | None:
        frac = np.abs(x - np.rint(x))
        cand = self.int_mask & (frac > INT_TOL)
        if not cand.any():
            return None
        top = self.priority[cand].max()
        cand &= self.priority == top
        return int(np.argmax(np.where(cand, frac, -1.0)))

    def record(self) -> None:
        bound = self.global_bound()
        self.best_bound = max(self.best_bound, bound)
        entry = (self.nodes, self.incumbent_value, self.best_bound)
        if not self.history or self.history[-1][1:] != entry[1:]:
            self.history.append(entry)

    def global_bound(self) -> float:
        if self.heap:
            return min(self.heap[0][0], self.incumbent_value)
        return self.incumbent_value

    def offer(self, x: np.ndarray, source: str = "rounded LP point") -> bool:
        """Round ``x`` and keep it if it is feasible and improves the incumbent."""
        xr = x.copy()
        xr[self.int_mask] = np.rint(xr[self.int_mask])
        if self.pure_integer:
            ints = [int(v) for v in xr]
            ok = self.program.exact_violation(ints) <= Fraction(0)
            value = self.program.objective_at(ints)
        else:
            ok = self.program.max_violation(xr) <= FEAS_TOL
            value = self.program.objective_at(xr)
        if not ok:
            log.warning("%s failed the exact feasibility re-check; discarded", source)
            return False
        if value < self.incumbent_value - 1e-9:
            self.incumbent = xr
            self.incumbent_value = value
            self.prune_heap()
            self.record()
            return True
        return False

    def prune_heap(self) -> None:
        cut = self.incumbent_value - self.tolerance()
        if self.heap:
            self.heap = [item for item in self.heap if item[0] < cut]
            heapq.heapify(self.heap)

    # -- nodes ------------------------------------------------------------
    def evaluate(self, changes: tuple) -> tuple[Status, np.ndarray | None, float | None]:
        lb, ub = self.bounds_for(changes)
        status, x, obj = self.rel.solve(lb, ub, time_limit=self.remaining())
        if status is Status.LIMIT_REACHED:
            self.hit_limit = True
        return status, x, obj

    def push(self, changes: tuple, x: np.ndarray, obj: float) -> None:
        bound = self.lp_bound(obj)
        if bound >= self.incumbent_value - self.tolerance():
            return
        j = self.branch_variable(x)
        if j is None:
            self.offer(x)
            return
        heapq.heappush(self.heap, (bound, -len(changes), next(self._seq), changes, j, float(x[j])))

    def dive(self, changes: tuple, x: np.ndarray, budget: int = _MAX_DIVE_LPS) -> None:
        """Depth-first plunge for an incumbent, nearest rounding first, with backtracking."""
        stack = [(changes, x)]
        while stack and budget > 0:
            if self.out_of_budget():
                return
            changes, x = stack.pop()
            j = self.branch_variable(x)
            if j is None:
                if self.offer(x):
                    return
                continue
            down = changes + ((j, "ub", math.floor(x[j])),)
            up = changes + ((j, "lb", math.ceil(x[j])),)
            # the stack is LIFO: push the preferred child last
            order = (down, up) if x[j] - math.floor(x[j]) >= 0.5 else (up, down)
            for trial in order:
                budget -= 1
                status, xt, obj = self.evaluate(trial)
                if status is Status.OPTIMAL and self.lp_bound(obj) < self.incumbent_value - self.tolerance():
                    stack.append((trial, xt))

    def run(self) -> MipSolution:
        status, x, obj = self.evaluate(())
        if status is Status.INFEASIBLE:
            return self.result(Status.INFEASIBLE, "root relaxation infeasible")
        if status is Status.UNBOUNDED:
            return self.result(Status.UNBOUNDED, "root relaxation unbounded")
        if status is not Status.OPTIMAL:
            return self.result(Status.LIMIT_REACHED, "limit reached in root relaxation")
        self.best_bound = self.lp_bound(obj)
        self.push((), x, obj)
        if self.program.start is not None:
            self.offer(np.asarray(self.program.start, dtype=float), "start point")
        self.record()
        if self.use_dive and self.heap:
            self.dive((), x)

        while self.heap:
            if self.out_of_budget() or self.hit_limit:
                self.hit_limit = True
                break
            bound, _, _, changes, j, xj = heapq.heappop(self.heap)
            if bound >= self.incumbent_value - self.tolerance():
                self.heap.clear()
                break
            self.nodes += 1
            children = []
            for child in (changes + ((j, "ub", math.floor(xj)),),
                          changes + ((j, "lb", math.ceil(xj)),)):
                st, xc, oc = self.evaluate(child)
                if st is Status.LIMIT_REACHED:
                    break
                children.append((child, st, xc, oc))
            else:
                for child, st, xc, oc in children:
                    if st is Status.OPTIMAL:
                        self.push(child, xc, oc)
            if self.hit_limit:
                # the unexplored parent still bounds its subtree
                heapq.heappush(self.heap, (bound, -len(changes), next(self._seq), changes, j, xj))
                break
            self.record()
            if self.use_dive and self.heap and self.nodes % _DIVE_EVERY == 0:
                _, _, _, ch, _, _ = self.heap[0]
                st, xc, _ = self.evaluate(ch)
                if st is Status.OPTIMAL:
                    self.dive(ch, xc, _MAX_DIVE_LPS if self.incumbent is None else _REPEAT_DIVE_LPS)

        if self.heap or self.hit_limit:
            if self.incumbent is None:
                return self.result(Status.LIMIT_REACHED, "limit reached without incumbent")
            return self.result(Status.FEASIBLE, "limit reached")
        if self.incumbent is None:
            return self.result(Status.INFEASIBLE, "search exhausted without an integer point")
        return self.result(Status.OPTIMAL, "")

    def result(self, status: Status, message: str) -> MipSolution:
        if status is Status.OPTIMAL:
            self.best_bound = max(self.best_bound, self.incumbent_value)
        elif status in (Status.FEASIBLE, Status.LIMIT_REACHED):
            self.best_bound = max(self.best_bound, min(self.global_bound(), self.incumbent_value))
        bound = self.best_bound if math.isfinite(self.best_bound) else None
        if status is Status.INFEASIBLE:
            bound = None
        names = [v.name for v in self.program.variables]
        return MipSolution(
            status=status,
            x=self.incumbent,
            objective_value=self.incumbent_value if self.incumbent is not None else None,
            bound=bound,
            names=names,
            nodes=self.nodes,
            runtime=time.monotonic() - self.start,
            history=self.history,
            message=message,
        )


def solve_ip(program: IntegerProgram, limits: SolveLimits | None = None, *,
             dive: bool = True, lp_engine: str = "auto") -> MipSolution:
    """Solve ``program`` to integer optimality or until ``limits`` run out.

    ``lp_engine`` chooses how node relaxations are solved (see
    :class:`~relocate.mip.lp.LPRelaxation`); it changes speed, not results.
    """
    problems = program.check()
    if problems:
        raise ModelError("; ".join(problems))
    return _Search(program, limits or SolveLimits(), dive, lp_engine).run()
