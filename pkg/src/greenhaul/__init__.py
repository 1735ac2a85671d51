"""Carbon-aware trip planning for battery-electric trucks under hard deadlines."""

from .charging import (
    ChargeCurve,
    ChargingStation,
    IntensitySignal,
    Objective,
    carbon_footprint,
    intensity_at,
    soc_increment,
    stop_cost,
)
from .dual import (
    SolverReport,
    posterior_gap,
    recover_feasible,
    run,
    solve_charging_subproblem,
    solve_outer,
    solve_speed_subproblem,
)
from .energy import edge_energy, minimize_affine_tradeoff, power_rate
from .errors import (
    ConfigError,
    DomainError,
    EnergyGainCycleError,
    GreenhaulError,
    OracleSizeError,
    StructureError,
)
from .network import (
    DualVector,
    Instance,
    RoadSegment,
    TransportGraph,
    load_instance,
    save_instance,
    travel_time_bounds,
    validate_instance,
)
from .plan import (
    Plan,
    PlanSummary,
    Stage,
    StopDecision,
    evaluate,
    reserve_condition_holds,
    residual_energy,
    residual_time,
    soc_trace,
)
from .bruteforce import OracleConfig, OracleResult, enumerate_optimal
from .scenarios import ScenarioSpec, deadline_from_factor, generate

__version__ = "0.1.0"

__all__ = [
    "ChargeCurve",
    "ChargingStation",
    "ConfigError",
    "DomainError",
    "DualVector",
    "EnergyGainCycleError",
    "GreenhaulError",
    "Instance",
    "IntensitySignal",
    "Objective",
    "OracleConfig",
    "OracleResult",
    "OracleSizeError",
    "Plan",
    "PlanSummary",
    "RoadSegment",
    "ScenarioSpec",
    "SolverReport",
    "Stage",
    "StopDecision",
    "StructureError",
    "TransportGraph",
    "carbon_footprint",
    "deadline_from_factor",
    "edge_energy",
    "enumerate_optimal",
    "evaluate",
    "generate",
    "intensity_at",
    "load_instance",
    "minimize_affine_tradeoff",
    "posterior_gap",
    "power_rate",
    "recover_feasible",
    "reserve_condition_holds",
    "residual_energy",
    "residual_time",
    "run",
    "save_instance",
    "soc_increment",
    "soc_trace",
    "solve_charging_subproblem",
    "solve_outer",
    "solve_speed_subproblem",
    "stop_cost",
    "travel_time_bounds",
    "validate_instance",
]
