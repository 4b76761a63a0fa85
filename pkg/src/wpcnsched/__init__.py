"""Minimum-length scheduling for wireless powered communication networks."""

__version__ = "0.1.0"

from .params import SystemParams, NetworkInstance
from .core import Features, Schedule, FeasibilityReport, rate_bps, isc_features, osm, evaluate, schedule_length
from .solver import SolverConfig, solve_tau, it_duration, total_length, solve_opt, InfeasibleError

__all__ = [
    "SystemParams",
    "NetworkInstance",
    "Features",
    "Schedule",
    "FeasibilityReport",
    "rate_bps",
    "isc_features",
    "osm",
    "evaluate",
    "schedule_length",
    "SolverConfig",
    "solve_tau",
    "it_duration",
    "total_length",
    "solve_opt",
    "InfeasibleError",
]
