"""Plan car relocations in a carsharing network with convoy drivers.

Two solvers share one instance/schedule model: an exact integer program
on a time-expanded network, and a fast heuristic that solves a flow on an
aggregated network of the stations with a task and then times the tours.
"""

from .generator import GenParams, GenerationFailed, generate
from .instance import (DisconnectedGraph, Instance, InstanceFormatError, ValidationReport,
                       read_instance, validate_instance, write_instance)
from .liftflow import HeuristicFailed, LiftFlowResult, solve_liftflow
from .schedule import (Move, OracleTooLarge, Tour, TransportationSchedule, brute_force_optimum,
                       read_schedule, simulate_states, validate_schedule, write_schedule)
from .ten import ExactResult, solve_exact

__version__ = "0.1.0"

__all__ = [
    "DisconnectedGraph", "ExactResult", "GenParams", "GenerationFailed", "HeuristicFailed",
    "Instance", "InstanceFormatError", "LiftFlowResult", "Move", "OracleTooLarge", "Tour",
    "TransportationSchedule", "ValidationReport", "brute_force_optimum", "generate",
    "read_instance", "read_schedule", "simulate_states", "solve_exact", "solve_liftflow",
    "validate_instance", "validate_schedule", "write_instance", "write_schedule",
]
