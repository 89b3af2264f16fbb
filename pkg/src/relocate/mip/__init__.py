"""Integer-programming substrate: models, LP relaxations, branch-and-bound."""

from .backends import BackendError, available_backends, register_backend, solve
from .bnb import solve_ip
from .lp import LPRelaxation, solve_lp
from .lpfile import write_lp
from .model import (IntegerProgram, MipSolution, ModelError, Relation, SolveLimits, Status,
                    Variable, relative_gap)

__all__ = [
    "BackendError", "IntegerProgram", "LPRelaxation", "MipSolution", "ModelError", "Relation",
    "SolveLimits", "Status", "Variable", "available_backends", "register_backend",
    "relative_gap", "solve", "solve_ip", "solve_lp", "write_lp",
]
