"""Server world, ego client, plant model, scenarios and run orchestration."""
from .client import EgoClient, EgoTrace, client_tick
from .controllers import (CONTROLLERS, Controller, ControllerParams, IdmController, MpcVehicleController, Observation,
                          Plan, WieController, make_controller)
from .cycles import CYCLE_SCALES, DriveCycle, cycle_path, load_cycle, modify_cycle_for_track
from .plant import TAU_A, TICK, PlantState, integrate_arrays, plant_integrate
from .runner import RunResult, run_loopback, run_networked, write_trace
from .scenario import SCENARIOS, ScenarioConfig
from .world import EGO, World, plan_to_v2v, server_tick, v2v_to_plan

__all__ = [
    "CONTROLLERS", "CYCLE_SCALES", "Controller", "ControllerParams", "DriveCycle", "EGO", "EgoClient", "EgoTrace",
    "IdmController", "MpcVehicleController", "Observation", "Plan", "PlantState", "RunResult",
    "SCENARIOS", "ScenarioConfig", "TAU_A", "TICK", "WieController", "World", "client_tick",
    "cycle_path", "integrate_arrays", "load_cycle", "make_controller", "modify_cycle_for_track",
    "plan_to_v2v", "plant_integrate", "run_loopback", "run_networked", "server_tick", "v2v_to_plan",
    "write_trace",
]
