"""Deterministic synthetic fuzzing environment."""

from trendfuzz.sim.fuzzer import SimFuzzer, SimOracle
from trendfuzz.sim.model import BranchUniverse, Phase, SimHarness, SimProfile, SimSeed, sim_execute
from trendfuzz.sim.scenarios import Scenario, load_scenario, scenario_library

__all__ = [
    "BranchUniverse",
    "Phase",
    "Scenario",
    "SimFuzzer",
    "SimHarness",
    "SimOracle",
    "SimProfile",
    "SimSeed",
    "load_scenario",
    "scenario_library",
    "sim_execute",
]
