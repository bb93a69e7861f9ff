"""Deterministic simulation: event loop, network, cluster manager, scenarios."""

from .cluster import CM, ClusterManager, FailureClassification, NoCandidateNode
from .engine import Network, Simulation, Trace, new_sim
from .scenario import (
    GeneratorParams,
    ReplayOracle,
    RunResult,
    Scenario,
    ScenarioParseError,
    SimCluster,
    bundled_scenarios,
    generate_workload,
    load_scenario,
    parse_scenario,
    run_scenario,
)

__all__ = [
    "CM",
    "ClusterManager",
    "FailureClassification",
    "GeneratorParams",
    "Network",
    "NoCandidateNode",
    "ReplayOracle",
    "RunResult",
    "Scenario",
    "ScenarioParseError",
    "SimCluster",
    "Simulation",
    "Trace",
    "bundled_scenarios",
    "generate_workload",
    "load_scenario",
    "new_sim",
    "parse_scenario",
    "run_scenario",
]
