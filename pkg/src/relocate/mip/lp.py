"""LP relaxations, solved with the HiGHS dual simplex shipped in scipy.

Two engines are available.  ``"cold"`` calls :func:`scipy.optimize.linprog`
from scratch on every solve.  ``"hot"`` keeps one HiGHS instance alive
(through the binding scipy bundles) so that a re-solve after a bound change
restarts from the previous basis; branch-and-bound nodes then cost a few
dozen pivots instead of a full solve.  ``"auto"`` picks ``"hot"`` when the
binding can be imported.
"""

from __future__ import annotations

import math
import time

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import IntegerProgram, MipSolution, Status

try:  # private to scipy, so everything degrades to the cold engine without it
    from scipy.optimize._highspy import _core as _hc
except ImportError:  # pragma: no cover - depends on the scipy build
    _hc = None

HOT_AVAILABLE = _hc is not None and hasattr(_hc, "_Highs")


class _HotHighs:
    def __init__(self, c, A_ub, b_ub, A_eq, b_eq, lb, ub):
        n = c.shape[0]
        blocks, lo, hi = [], [], []
        if A_ub is not None:
            blocks.append(A_ub)
            lo.append(np.full(A_ub.shape[0], -np.inf))
            hi.append(b_ub)
        if A_eq is not None:
            blocks.append(A_eq)
            lo.append(b_eq)
            hi.append(b_eq)
        A = sp.vstack(blocks).tocsc() if blocks else sp.csc_matrix((0, n))
        inf = _hc.kHighsInf
        lp = _hc.HighsLp()
        lp.num_col_ = n
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = np.asarray(c, dtype=float)
        lp.col_lower_ = np.clip(lb, -inf, inf)
        lp.col_upper_ = np.clip(ub, -inf, inf)
        lp.row_lower_ = np.clip(np.concatenate(lo) if lo else np.zeros(0), -inf, inf)
        lp.row_upper_ = np.clip(np.concatenate(hi) if hi else np.zeros(0), -inf, inf)
        lp.a_matrix_.format_ = _hc.MatrixFormat.kColwise
        lp.a_matrix_.num_col_ = n
        lp.a_matrix_.num_row_ = A.shape[0]
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        self.h = _hc._Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.setOptionValue("threads", 1)
        self.h.passModel(lp)
        self.n = n
        self.cols = np.arange(n, dtype=np.int32)
        self.inf = inf

    def solve(self, lb, ub, time_limit):
        h = self.h
        h.changeColsBounds(self.n, self.cols, np.clip(lb, -self.inf, self.inf),
                           np.clip(ub, -self.inf, self.inf))
        # HiGHS compares time_limit with the object's cumulative run clock
        h.setOptionValue("time_limit", h.getRunTime() + float(time_limit) if math.isfinite(time_limit) else self.inf)
        h.run()
        st = h.getModelStatus()
        M = _hc.HighsModelStatus
        if st == M.kOptimal:
            x = np.array(h.getSolution().col_value, dtype=float)
            return Status.OPTIMAL, x, float(h.getInfo().objective_function_value)
        if st == M.kInfeasible:
            return Status.INFEASIBLE, None, None
        if st == M.kUnbounded:
            return Status.UNBOUNDED, None, None
        if st in (M.kTimeLimit, M.kIterationLimit, M.kInterrupt):
            return Status.LIMIT_REACHED, None, None
        return None  # anything odd is retried cold


class LPRelaxation:
    """The continuous relaxation of a program, re-solvable under tightened bounds."""

    def __init__(self, program: IntegerProgram, engine: str = "auto"):
        if engine not in ("auto", "hot", "cold"):
            raise ValueError(f"unknown LP engine {engine!r}")
        if engine == "hot" and not HOT_AVAILABLE:
            raise ValueError("the hot-start HiGHS binding is not available in this scipy build")
        self.program = program
        self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self.lb, self.ub = program.arrays()
        self.engine = "hot" if engine == "auto" and HOT_AVAILABLE else ("cold" if engine == "auto" else engine)
        self._hot = None
        self.solves = 0

    def solve(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None,
              time_limit: float = math.inf) -> tuple[Status, np.ndarray | None, float | None]:
        lb = self.lb if lb is None else lb
        ub = self.ub if ub is None else ub
        if np.any(lb > ub + 1e-9):
            return Status.INFEASIBLE, None, None
        if self.engine == "hot":
            if self._hot is None:
                self._hot = _HotHighs(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self.lb, self.ub)
            self.solves += 1
            out = self._hot.solve(lb, ub, max(time_limit, 1e-3))
            if out is not None:
                return out
        return self._solve_cold(lb, ub, time_limit)

    def _solve_cold(self, lb, ub, time_limit):
        options = {"presolve": True}
        if math.isfinite(time_limit):
            options["time_limit"] = max(time_limit, 1e-3)
        self.solves += 1
        res = linprog(self.c, A_ub=self.A_ub, b_ub=self.b_ub, A_eq=self.A_eq, b_eq=self.b_eq,
                      bounds=np.column_stack([lb, ub]), method="highs-ds", options=options)
        if res.status == 0:
            return Status.OPTIMAL, np.asarray(res.x, dtype=float), float(res.fun)
        if res.status == 2:
            return Status.INFEASIBLE, None, None
        if res.status == 3:
            return Status.UNBOUNDED, None, None
        return Status.LIMIT_REACHED, None, None


def solve_lp(program: IntegerProgram) -> MipSolution:
    """Solve the relaxation of ``program`` with integrality dropped."""
    start = time.monotonic()
    status, x, obj = LPRelaxation(program).solve()
    names = [v.name for v in program.variables]
    return MipSolution(status=status, x=x, objective_value=obj,
                       bound=obj if status is Status.OPTIMAL else None,
                       names=names, runtime=time.monotonic() - start)
