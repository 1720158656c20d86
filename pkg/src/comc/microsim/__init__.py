"""Microscopic simulation of the merge bottleneck."""

from .arrivals import generate_arrivals, source_rng
from .engine import (CoordinationCycle, RunResult, SimConfig, SimParams,
                     VehicleState, World, adjust_sc_position,
                     car_following_update, plan_platoon_release,
                     predict_mp_arrival, run_simulation)
from .geometry import NetworkGeometry, standard_geometry

__all__ = [
    "CoordinationCycle", "NetworkGeometry", "RunResult", "SimConfig",
    "SimParams", "VehicleState", "World", "adjust_sc_position",
    "car_following_update", "generate_arrivals", "plan_platoon_release",
    "predict_mp_arrival", "run_simulation", "source_rng",
    "standard_geometry",
]
