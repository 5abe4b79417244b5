"""Quasistatic fracture with a bond-based nonlocal (peridynamic) model.

Displacement-controlled load stepping, Newton iteration with the exact
tangent, bond breaking at the inflection strain of a cohesive potential, and
brute-force oracles to check the fast paths.
"""

from .config import ScenarioConfig, ScenarioError, build_problem, load_bundled, load_scenario, parse_scenario
from .geometry import BondGraph, NodeSet, build_bond_graph, build_regular_grid
from .material import MaterialModel, calibrate
from .operator import assemble_residual, assemble_tangent, stability_field
from .postprocess import crack_tip, damage, intact_energy
from .solver import EvolutionRecord, LoadSchedule, NewtonConfig, SolveState, run_evolution

__version__ = "0.1.0"

__all__ = [
    "BondGraph",
    "EvolutionRecord",
    "LoadSchedule",
    "MaterialModel",
    "NewtonConfig",
    "NodeSet",
    "ScenarioConfig",
    "ScenarioError",
    "SolveState",
    "assemble_residual",
    "assemble_tangent",
    "build_bond_graph",
    "build_problem",
    "build_regular_grid",
    "calibrate",
    "crack_tip",
    "damage",
    "intact_energy",
    "load_bundled",
    "load_scenario",
    "parse_scenario",
    "run_evolution",
    "stability_field",
]
