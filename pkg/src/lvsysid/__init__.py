"""Identification of switch states, phases, impedances and cable types in
low-voltage grids from a few boundary measurements and smart-meter totals."""

__version__ = "0.1.0"

from .cables import CableTypeIdentifier, identify_cables
from .closedform import ClosedFormIdentifier, ClosedFormProblem, solve_closed_form, solve_inner_qp
from .exceptions import SysIdError
from .grid import GridGraph, decompose_subsystems, load_default_grid, load_grid
from .phases import NpmuPhaseIdentifier, identify_phases
from .pipeline import IdentificationReport, ScenarioConfig, run_montecarlo, run_pipeline
from .regression import ParticipationRegressor, estimate_ztot_all
from .simulate import NoiseModel, measure, profiles_for_grid, simulate
from .switches import SwitchStateDetector, identify_topology

__all__ = [
    "CableTypeIdentifier",
    "ClosedFormIdentifier",
    "ClosedFormProblem",
    "GridGraph",
    "IdentificationReport",
    "NoiseModel",
    "NpmuPhaseIdentifier",
    "ParticipationRegressor",
    "ScenarioConfig",
    "SwitchStateDetector",
    "SysIdError",
    "decompose_subsystems",
    "estimate_ztot_all",
    "identify_cables",
    "identify_phases",
    "identify_topology",
    "load_default_grid",
    "load_grid",
    "measure",
    "profiles_for_grid",
    "run_montecarlo",
    "run_pipeline",
    "simulate",
    "solve_closed_form",
    "solve_inner_qp",
]
