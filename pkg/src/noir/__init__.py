"""Traffic network control with conservation and conduction models."""

from .network import NoirNetwork, RoadSpec, build_network, upstream_pairs
from .phases import PhaseState, PhaseTable, Signal, phase_space_size
from .scenario import Scenario, SimConfig, load_scenario, parse_scenario
from .simulate import SimTrace, emit_outputs, run, run_scenario

__all__ = [
    "NoirNetwork", "RoadSpec", "build_network", "upstream_pairs",
    "PhaseState", "PhaseTable", "Signal", "phase_space_size",
    "Scenario", "SimConfig", "load_scenario", "parse_scenario",
    "SimTrace", "emit_outputs", "run", "run_scenario",
]
