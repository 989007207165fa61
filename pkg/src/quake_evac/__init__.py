"""Agent-based simulation of pedestrian evacuation after an earthquake."""

from .engine import MetricsFrame, RunResult, SeededRng, Simulation, run
from .scenario import ScenarioConfig, SyntheticParams, generate_synthetic, load_geojson, load_scenario, preset

__all__ = [
    "MetricsFrame",
    "RunResult",
    "ScenarioConfig",
    "SeededRng",
    "Simulation",
    "SyntheticParams",
    "generate_synthetic",
    "load_geojson",
    "load_scenario",
    "preset",
    "run",
]
