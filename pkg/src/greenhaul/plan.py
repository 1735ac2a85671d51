"""Candidate solutions on the stage-expanded trip: plans, residuals, accounting.

A :class:`Plan` is a sequence of stages.  Stage ``i`` drives a (possibly
empty) subpath and ends at a stop: a charging station for intermediate
stages, the destination for the final stage and for passthrough stages
after an early arrival.  Each stop records the decision variables -- wait
and charge duration plus the *scheduled* entry time ``tau`` and entry SoC
``beta``.  Feasibility is a set of signed residuals (time and energy books
must balance with non-positive slack) plus box constraints.

Destination stops never wait or charge; padding a plan with extra
destination passthrough stages changes nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import energy
from .charging import Objective, carbon_footprint, stop_cost
from .errors import StructureError
from .network import Instance

#: Default feasibility tolerance, in native units (hours / kWh).
FEAS_TOL = 1e-6


@dataclass(frozen=True)
class StopDecision:
    """End-of-stage stop: where, how long to wait/charge, and the scheduled state."""

    node: str
    wait: float = 0.0
    charge: float = 0.0
    tau: float = 0.0
    beta: float = 0.0


@dataclass(frozen=True)
class Stage:
    edges: tuple[str, ...]
    travel_times: tuple[float, ...]
    stop: StopDecision

    def __post_init__(self):
        if len(self.edges) != len(self.travel_times):
            raise StructureError("stage edge/time length mismatch")


@dataclass(frozen=True)
class Plan:
    stages: tuple[Stage, ...]

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def stop_nodes(self) -> tuple[str, ...]:
        return tuple(st.stop.node for st in self.stages)

    def total_travel_time(self) -> float:
        return sum(sum(st.travel_times) for st in self.stages)

    def total_stop_time(self) -> float:
        return sum(st.stop.wait + st.stop.charge for st in self.stages)

    def duration(self) -> float:
        return self.total_travel_time() + self.total_stop_time()

    def distance_km(self, instance: Instance) -> float:
        g = instance.graph
        return sum(g.segment_by_id(e).length_km for st in self.stages for e in st.edges)


@dataclass(frozen=True)
class Residuals:
    """Signed constraint slacks per stage; a plan is feasible iff all <= 0."""

    time: np.ndarray
    energy: np.ndarray

    def padded(self, n_stages: int) -> "Residuals":
        t = np.zeros(n_stages)
        e = np.zeros(n_stages)
        t[: len(self.time)] = self.time
        e[: len(self.energy)] = self.energy
        return Residuals(t, e)

    @property
    def max_violation(self) -> float:
        return float(max(self.time.max(initial=0.0), self.energy.max(initial=0.0)))


def validate_structure(plan: Plan, instance: Instance) -> None:
    """Raise :class:`StructureError` unless subpaths chain origin -> stops -> destination."""
    if plan.n_stages < 1:
        raise StructureError("plan has no stages")
    if plan.n_stages > instance.n_stages:
        raise StructureError(
            f"plan has {plan.n_stages} stages, instance allows {instance.n_stages}"
        )
    g = instance.graph
    at = instance.origin
    arrived = False
    for idx, stage in enumerate(plan.stages):
        for seg_id, t in zip(stage.edges, stage.travel_times):
            seg = g.segment_by_id(seg_id)
            if seg.tail != at:
                raise StructureError(f"stage {idx + 1}: segment {seg_id} does not start at {at}")
            at = seg.head
        stop = stage.stop
        if stop.node != at:
            raise StructureError(f"stage {idx + 1}: stop {stop.node} is not the subpath end {at}")
        if arrived and stop.node != instance.destination:
            raise StructureError("stages after reaching the destination must stay there")
        if stop.node == instance.destination:
            arrived = True
            if stop.wait != 0.0 or stop.charge != 0.0:
                raise StructureError("destination stops cannot wait or charge")
        elif g.station_at(stop.node) is None:
            raise StructureError(f"stop {stop.node} is not a charging station")
    if plan.stages[-1].stop.node != instance.destination:
        raise StructureError("plan does not end at the destination")


def _prev_stop(plan: Plan, instance: Instance, stage_index: int) -> StopDecision:
    if stage_index == 1:
        return StopDecision(instance.origin, 0.0, 0.0, 0.0, instance.initial_soc)
    return plan.stages[stage_index - 2].stop


def residual_time(plan: Plan, instance: Instance, stage_index: int) -> float:
    """Time-book slack of one stage (1-based): travel + prior stop time minus window."""
    stage = plan.stages[stage_index - 1]
    prev = _prev_stop(plan, instance, stage_index)
    spent = sum(stage.travel_times) + prev.wait + prev.charge
    return spent - (stage.stop.tau - prev.tau)


def residual_energy(plan: Plan, instance: Instance, stage_index: int) -> float:
    """Energy-book slack of one stage: consumption + scheduled entry SoC minus supply."""
    g = instance.graph
    stage = plan.stages[stage_index - 1]
    prev = _prev_stop(plan, instance, stage_index)
    consumed = sum(
        energy.edge_energy(g.segment_by_id(e), t)
        for e, t in zip(stage.edges, stage.travel_times)
    )
    station = g.station_at(prev.node)
    gained = 0.0
    if station is not None and prev.charge > 0 and prev.node != instance.destination:
        gained = station.curve.increment(prev.charge, prev.beta)
    return consumed + stage.stop.beta - (prev.beta + gained)


def residuals(plan: Plan, instance: Instance) -> Residuals:
    n = plan.n_stages
    return Residuals(
        np.array([residual_time(plan, instance, i) for i in range(1, n + 1)]),
        np.array([residual_energy(plan, instance, i) for i in range(1, n + 1)]),
    )


def soc_trace(plan: Plan, instance: Instance) -> tuple[list[float], float]:
    """Replay the battery along the plan; returns per-segment SoC and the minimum.

    Charging is applied at stops using the *actual* arrival SoC and clamps at
    capacity, so the trace is the physically executed state sequence.
    """
    g = instance.graph
    soc = instance.initial_soc
    trace: list[float] = []
    low = soc
    for stage in plan.stages:
        for seg_id, t in zip(stage.edges, stage.travel_times):
            # Regenerated energy is left unclamped between stops so the trace
            # matches the stage energy books; clamping happens when charging.
            soc -= energy.edge_energy(g.segment_by_id(seg_id), t)
            trace.append(soc)
            low = min(low, soc)
        station = g.station_at(stage.stop.node)
        if station is not None and stage.stop.charge > 0 and stage.stop.node != instance.destination:
            soc = min(instance.capacity, soc + station.curve.increment(stage.stop.charge, min(max(soc, 0.0), instance.capacity)))
    return trace, low


def reserve_condition_holds(energies, alpha: float) -> bool:
    """Sufficient condition linking harvested (negative) energy to the reserve ratio.

    If ``0.5 * sum(|c| - c) <= alpha / (2 (1 - alpha)) * sum(c)`` along a
    subpath, then reaching its end stop with at least ``alpha * capacity``
    guarantees the battery never went negative along the way.
    """
    c = np.asarray(energies, dtype=float)
    if c.size < 1:
        raise ValueError("need at least one segment energy")
    if not (0 <= alpha < 1):
        raise ValueError(f"alpha {alpha} outside [0, 1)")
    harvested = 0.5 * float(np.sum(np.abs(c) - c))
    return harvested <= alpha / (2.0 * (1.0 - alpha)) * float(np.sum(c))


@dataclass(frozen=True)
class PlanSummary:
    objective: float
    carbon_kg: float
    energy_kwh: float
    charged_kwh: float
    distance_km: float
    time_h: float
    feasible: bool
    max_residual: float
    min_soc: float
    strict_soc_ok: bool

    def csv_row(self) -> dict:
        return {
            "carbon_kg": self.carbon_kg,
            "energy_kwh": self.energy_kwh,
            "distance": self.distance_km,
            "time_h": self.time_h,
            "feasible": int(self.feasible),
        }


CSV_COLUMNS = ("carbon_kg", "energy_kwh", "distance", "time_h", "feasible")


def evaluate(
    plan: Plan,
    instance: Instance,
    strict_soc: bool = False,
    tol: float = FEAS_TOL,
) -> PlanSummary:
    """Objective and feasibility accounting for a structurally valid plan.

    Feasibility requires all residuals <= ``tol``, every decision variable
    inside its box, destination arrival no later than the deadline, and (only
    when ``strict_soc`` is set) a non-negative battery after every segment.
    """
    validate_structure(plan, instance)
    res = residuals(plan, instance)
    g = instance.graph

    boxes_ok = True
    for stage in plan.stages:
        for seg_id, t in zip(stage.edges, stage.travel_times):
            seg = g.segment_by_id(seg_id)
            if t < seg.t_lb - tol or t > seg.t_ub + tol:
                boxes_ok = False
        stop = stage.stop
        if stop.tau < -tol or stop.tau > instance.deadline + tol:
            boxes_ok = False
        if stop.beta < instance.reserve_kwh - tol or stop.beta > instance.capacity + tol:
            boxes_ok = False
        if stop.node != instance.destination:
            if stop.wait < instance.wait_lb - tol or stop.wait > instance.wait_ub + tol:
                boxes_ok = False
            if stop.charge < -tol or stop.charge > instance.charge_ub + tol:
                boxes_ok = False

    carbon = 0.0
    charged = 0.0
    grid_energy = 0.0
    for stage in plan.stages:
        stop = stage.stop
        station = g.station_at(stop.node)
        if station is None or stop.node == instance.destination:
            continue
        carbon += carbon_footprint(
            station, stop.beta, stop.charge, stop.tau + stop.wait, instance.efficiency
        )
        inc = station.curve.increment(stop.charge, stop.beta)
        charged += inc
        grid_energy += inc / instance.efficiency

    traction = sum(
        energy.edge_energy(g.segment_by_id(e), t)
        for stage in plan.stages
        for e, t in zip(stage.edges, stage.travel_times)
    )
    duration = plan.duration()
    trace, low = soc_trace(plan, instance)
    strict_ok = low >= -tol * max(1.0, instance.capacity)

    if instance.objective is Objective.TIME:
        objective = duration
    elif instance.objective is Objective.ENERGY:
        objective = grid_energy
    else:
        objective = carbon

    feasible = bool(res.max_violation <= tol and boxes_ok)
    if strict_soc:
        feasible = feasible and strict_ok
    return PlanSummary(
        objective=objective,
        carbon_kg=carbon,
        energy_kwh=traction,
        charged_kwh=charged,
        distance_km=plan.distance_km(instance),
        time_h=duration,
        feasible=feasible,
        max_residual=res.max_violation,
        min_soc=low,
        strict_soc_ok=strict_ok,
    )


def assemble_timeline_plan(
    instance: Instance,
    stops,
    subpaths,
    times,
    waits,
    charges,
) -> Plan:
    """Build a plan from decision knobs, deriving entry times/SoCs from the timeline.

    ``stops`` are the intermediate stop nodes (one fewer than ``subpaths``);
    ``times`` is a per-stage sequence of per-segment travel times.  Scheduled
    stop SoCs are clamped at capacity (regenerated overflow is discarded when
    parking), which only adds slack to the energy books.
    """
    g = instance.graph
    tau = 0.0
    beta = instance.initial_soc
    stages = []
    n_stages = len(subpaths)
    for i in range(n_stages):
        edges = tuple(subpaths[i])
        stage_times = tuple(float(t) for t in times[i])
        for e, t in zip(edges, stage_times):
            beta -= energy.edge_energy(g.segment_by_id(e), t)
        tau += sum(stage_times)
        if i < n_stages - 1:
            node = stops[i]
            station = g.station_at(node)
            if station is None:
                raise StructureError(f"stop {node} is not a charging station")
            # clamp the scheduled SoC into [0, capacity]: inactive on feasible
            # timelines, and it keeps deficit plans evaluable (they stay
            # infeasible through the residuals / boxes).
            entry = min(max(beta, 0.0), instance.capacity)
            stop = StopDecision(node, float(waits[i]), float(charges[i]), tau, entry)
            beta = entry + station.curve.increment(float(charges[i]), entry)
            tau += float(waits[i]) + float(charges[i])
        else:
            stop = StopDecision(
                instance.destination,
                0.0,
                0.0,
                tau,
                min(max(beta, 0.0), instance.capacity),
            )
        stages.append(Stage(edges, stage_times, stop))
    return Plan(tuple(stages))


# ---------------------------------------------------------------------------
# Serialization (mirrors the instance file conventions)


def plan_to_dict(plan: Plan) -> dict:
    return {
        "units": {"time": "hours", "energy": "kWh"},
        "stages": [
            {
                "edges": list(st.edges),
                "travel_times_h": list(st.travel_times),
                "stop": {
                    "node": st.stop.node,
                    "wait_h": st.stop.wait,
                    "charge_h": st.stop.charge,
                    "entry_time_h": st.stop.tau,
                    "entry_soc_kwh": st.stop.beta,
                },
            }
            for st in plan.stages
        ],
    }


def plan_from_dict(doc: dict) -> Plan:
    stages = []
    for entry in doc["stages"]:
        stop = entry["stop"]
        stages.append(
            Stage(
                edges=tuple(entry["edges"]),
                travel_times=tuple(float(t) for t in entry["travel_times_h"]),
                stop=StopDecision(
                    node=stop["node"],
                    wait=float(stop["wait_h"]),
                    charge=float(stop["charge_h"]),
                    tau=float(stop["entry_time_h"]),
                    beta=float(stop["entry_soc_kwh"]),
                ),
            )
        )
    return Plan(tuple(stages))


def plan_to_json(plan: Plan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True)


def save_plan(plan: Plan, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(plan_to_json(plan))
        fh.write("\n")


def load_plan(path: str) -> Plan:
    with open(path) as fh:
        return plan_from_dict(json.load(fh))
